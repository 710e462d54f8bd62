import time

from stopwatch import Event, stamp


def test_tag_records_time():
    e = Event("build")
    now = time.time()
    n = e.tag("ci")
    assert n >= 1
    assert e.created <= now


def test_stamp():
    e = stamp("deploy")
    assert e.age() >= 0
    assert e.label().startswith("deploy@")
