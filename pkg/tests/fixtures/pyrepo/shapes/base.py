"""Shape base class."""


class Shape:
    name = "shape"

    def area(self):
        raise NotImplementedError

    def describe(self):
        # describe goes through the subclass area implementation
        return "%s: %s" % (self.name, self.area())
