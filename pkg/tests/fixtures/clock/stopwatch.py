import time


class Event:
    def __init__(self, name):
        self.name = name
        self.created = time.time()
        self.tags = []

    def tag(self, label):
        self.tags.append(label)
        return len(self.tags)

    def age(self):
        return time.time() - self.created

    def label(self):
        return f"{self.name}@{self.created}"


def stamp(name):
    return Event(name)
