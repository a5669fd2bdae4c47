class Item:
    def __init__(self, sku, count):
        self.sku = sku
        self.count = count


class Inventory:
    def __init__(self):
        self.items = {}

    def add(self, item):
        if item.sku in self.items:
            self.items[item.sku].count += item.count
        else:
            self.items[item.sku] = item

    def low_stock(self, threshold):
        out = []
        for item in self.items.values():
            if item.count < threshold:
                out.append(item.sku)
        return out
