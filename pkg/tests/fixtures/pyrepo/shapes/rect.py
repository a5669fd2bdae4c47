from .base import Shape


class Rectangle(Shape):
    name = "rectangle"

    def __init__(self, w, h):
        self.w = w
        self.h = h

    def area(self):
        return self.w * self.h


class Square(Rectangle):
    name = "square"

    def __init__(self, side):
        Rectangle.__init__(self, side, side)
