from inventory import Inventory, merge


def test_add_and_names():
    inv = Inventory()
    inv.add("apple", 3)
    inv.add("pear")
    assert inv.names() == ["apple", "pear"]


def test_remove_all():
    inv = Inventory({"apple": 2})
    assert inv.remove("apple", 5) == 0
    assert inv.names() == []


def test_low_stock():
    inv = Inventory({"apple": 1, "pear": 9})
    low = inv.low_stock(5)
    assert len(low) == 1


def test_merge():
    a = Inventory({"apple": 1})
    b = Inventory({"apple": 2, "fig": 1})
    m = merge(a, b)
    assert m.total() > 0


def test_ratio():
    inv = Inventory({"apple": 1, "pear": 3})
    assert inv.ratio("pear") > 0.5


def test_snapshot():
    inv = Inventory({"b": 1, "a": 2})
    snap = inv.snapshot()
    assert snap


class TestTouched:
    def test_fresh(self):
        assert not Inventory().touched()
