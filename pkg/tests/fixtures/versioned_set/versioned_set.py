class VersionedSet:
    """A set that counts successful insertions."""

    def __init__(self):
        self.__version = 0
        self.__elements = []

    def add(self, item):
        if item in self.__elements:
            return
        self.__elements.append(item)
        self.__increment_version()

    def __increment_version(self):
        self.__version += 1

    def get_version(self):
        return self.__version

    def size(self):
        return len(self.__elements)

    def is_empty(self):
        return self.size() == 0

    def contains(self, item):
        return item in self.__elements

    def equals(self, other):
        if not isinstance(other, VersionedSet):
            return False
        if other.size() != self.size():
            return False
        for item in self.__elements:
            if not other.contains(item):
                return False
        return True

    def intersect(self, other):
        if self.is_empty() or other.is_empty():
            return VersionedSet()
        result = VersionedSet()
        for item in self.__elements:
            if other.contains(item):
                result.add(item)
        result.__version = 0
        return result
