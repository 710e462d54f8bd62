from versioned_set import VersionedSet


def test_add():
    list = VersionedSet()
    list.add(1)
    assert list.size() == 1


def test_equals():
    one = VersionedSet()
    two = VersionedSet()
    assert one.equals(two)


def test_intersection():
    one = VersionedSet()
    one.add(1)
    two = VersionedSet()
    two.add(2)
    result = one.intersect(two)
    assert not result.contains(1)
    assert not result.contains(2)
