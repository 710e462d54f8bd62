def double(x):
    return x * 2


def is_small(x):
    return x < 10
