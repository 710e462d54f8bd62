"""Item counts keyed by name."""


class Inventory:
    __slots__ = ("items", "_log")

    def __init__(self, items=None):
        self.items = dict(items or {})
        self._log = []

    def add(self, name, quantity=1):
        self.items[name] = self.items.get(name, 0) + quantity
        self._log.append(name)

    def remove(self, name, quantity=1):
        if name not in self.items:
            raise KeyError(name)
        left = self.items[name] - quantity
        if left <= 0:
            del self.items[name]
            return 0
        self.items[name] = left
        return left

    def names(self):
        return sorted(self.items)

    def total(self):
        return sum(self.items.values())

    def low_stock(self, threshold):
        return [n for n, q in sorted(self.items.items()) if q < threshold]

    def snapshot(self):
        return tuple(sorted(self.items.items()))

    def ratio(self, name):
        total = self.total()
        if not total:
            return 0.0
        return self.items.get(name, 0) / total

    def touched(self):
        return len(self._log) > 0


def merge(first, second):
    out = Inventory(first.items)
    for name, quantity in second.items.items():
        out.add(name, quantity)
    return out
