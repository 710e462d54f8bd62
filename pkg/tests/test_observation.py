import textwrap

from hypothesis import given
from hypothesis import strategies as st

from riptide.config import ExecutionConfig
from riptide.observation import (InvariantState, Key, StateDiff, aggregate, get_diff, match_invocations,
                                 observe, root_of)

keys = st.builds(Key, st.sampled_from(["t1", "t2"]), st.sampled_from(["m", "s"]), st.integers(0, 2),
                 st.sampled_from(["result.value", "this.size", "arg0.null", "x"]))
states = st.dictionaries(keys, st.sampled_from(["0", "1", "true"]), max_size=20)


def rec(path, value, test="t", point="p", k=0):
    return {"test_id": test, "point_id": point, "invocation_index": k, "path": path, "value": value}


def test_aggregate_keeps_only_invariant_keys():
    runs = [
        [rec("a", "1"), rec("b", "1"), rec("c", "1")],
        [rec("a", "1"), rec("b", "2"), rec("c", "1")],
        [rec("a", "1"), rec("b", "1")],
    ]
    state = aggregate(runs)
    assert state.values == {Key("t", "p", 0, "a"): "1"}
    assert state.dropped == 2 and state.runs == 3


def test_state_save_and_load(tmp_path):
    s = aggregate([[rec("a", "1")]])
    s.outcomes = [{"t": "pass"}]
    s.save(tmp_path / "s.jsonl")
    back = InvariantState.load(tmp_path / "s.jsonl")
    assert (back.values, back.runs, back.outcomes) == (s.values, 1, [{"t": "pass"}])


@given(states, states)
def test_get_diff_matches_definition(a, b):
    d = get_diff(a, b)
    assert {e.key for e in d.entries} == {k for k in a.keys() & b.keys() if a[k] != b[k]}
    assert all((a[e.key], b[e.key]) == (e.original, e.transformed) for e in d.entries)
    assert d.asymmetric_keys == len(a.keys() ^ b.keys())
    assert [e.key for e in d.entries] == sorted(e.key for e in d.entries)


@given(states, states)
def test_get_diff_is_symmetric(a, b):
    ab, ba = get_diff(a, b), get_diff(b, a)
    assert [(e.key, e.original, e.transformed) for e in ab.entries] == \
           [(e.key, e.transformed, e.original) for e in ba.entries]
    assert ab.asymmetric_keys == ba.asymmetric_keys


@given(states)
def test_self_diff_is_empty(a):
    assert not get_diff(a, a) and get_diff(a, a).asymmetric_keys == 0


def test_diff_round_trip_and_locus():
    a = {Key("t", "m", 0, "result.value"): "1", Key("t", "m", 0, "this.size"): "2", Key("t", "s", 0, "x"): "3"}
    b = {k: v + "0" for k, v in a.items()}
    d = get_diff(a, b)
    assert d.locus == ["result", "test", "this"]
    assert StateDiff.from_dict(d.to_dict()) == d
    assert root_of("arg2.size") == "arg2" and root_of("argument.x") == "test"


def test_match_invocations_pairs_by_index():
    orig = [rec("a", "1", k=0), rec("b", "1", k=0), rec("a", "2", k=1)]
    trans = [rec("a", "1", k=0), rec("a", "5", k=1), rec("a", "7", k=2)]
    pairs, unpaired = match_invocations(orig, trans)
    assert len(pairs) == 2 and unpaired == 1
    assert [r["value"] for r in pairs[1][1]] == ["5"]


def test_observe_filters_values_that_change_between_runs(tmp_path):
    (tmp_path / "test_clock.py").write_text(textwrap.dedent('''
        import random
        import time
        from riptide import runtime

        def test_values():
            runtime.obs("now", time.time())
            runtime.obs("rand", random.random())
            runtime.obs("fixed", 42)
    '''), encoding="utf-8")
    cfg = ExecutionConfig(plugin_autoload=False, runner="fork")
    state = observe(tmp_path, ["test_clock.py::test_values"], 4, cfg)
    assert state.values == {Key("test_clock.py::test_values", "fixed", 0, "value"): "42"}
    assert state.dropped == 2 and state.runs == 4 and not state.degraded
    assert state.outcomes == [{"test_clock.py::test_values": "pass"}] * 4
