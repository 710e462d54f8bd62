"""Property-value views of runtime values.

A value is reduced to a set of ``(path, value)`` pairs. Scalars give a single
``value`` leaf; references give ``null`` plus ``length`` for array-like values
and ``size`` for collections. The full state of an object adds the basic
state of each instance field, one level deep.

This module is imported inside subject test processes, so it must stay
dependency-free and must never call back into subject code except through
``len`` on collection types.
"""
from __future__ import annotations

import array
import collections.abc
import json
import re
import types
from typing import Any, Iterator, NamedTuple

MAX_STRING = 256

_SCALARS = (bool, int, float, complex, str)
_ARRAY_LIKE = (tuple, bytes, bytearray, array.array, memoryview)
_OPAQUE = (
    types.ModuleType,
    type,
    types.FunctionType,
    types.BuiltinFunctionType,
    types.MethodType,
    types.CodeType,
    types.FrameType,
    types.TracebackType,
)
_MANGLED = re.compile(r"^_([A-Za-z0-9_]*?[A-Za-z0-9])__(?!_)(.+)$")


class StateProperty(NamedTuple):
    path: str
    value: str


def render(v: Any) -> str:
    """Canonical text of a scalar; differences are judged on this text."""
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float, complex)):
        return repr(v)
    if isinstance(v, str):
        if len(v) > MAX_STRING:
            v = f"{v[:MAX_STRING]}...(len={len(v)})"
        return json.dumps(v, ensure_ascii=False)
    return json.dumps(str(v))


def value_kind(v: Any) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, float):
        return "float"
    if isinstance(v, complex):
        return "complex"
    if isinstance(v, str):
        return "string"
    t = type(v)
    return f"object:{t.__module__}.{t.__qualname__}"


def is_scalar(v: Any) -> bool:
    return isinstance(v, _SCALARS)


def basic_items(v: Any) -> Iterator[tuple[str, str, str]]:
    """Yield ``(leaf, rendered, kind)`` triples of the basic state of *v*."""
    if isinstance(v, _SCALARS):
        yield "value", render(v), value_kind(v)
        return
    if v is None:
        yield "null", "true", "null"
        return
    yield "null", "false", value_kind(v)
    if isinstance(v, _OPAQUE):
        return
    if isinstance(v, _ARRAY_LIKE):
        yield "length", str(len(v)), "integer"
    elif isinstance(v, (collections.abc.Collection, collections.abc.Mapping)):
        try:
            yield "size", str(len(v)), "integer"
        except Exception:
            yield "size.error", "true", "error"
    elif _is_ndarray(v):
        yield "length", str(len(v)) if v.ndim else "0", "integer"


def _is_ndarray(v: Any) -> bool:
    t = type(v)
    return t.__name__ == "ndarray" and t.__module__ == "numpy"


def field_label(storage: str, owner_names: set[str] | frozenset[str] = frozenset()) -> str:
    """Strip privacy underscores and name mangling from a storage name."""
    if storage.startswith("__") and storage.endswith("__"):
        return storage
    m = _MANGLED.match(storage)
    if m and (not owner_names or m.group(1).lstrip("_") in owner_names):
        storage = m.group(2)
    return storage.lstrip("_") or storage


def instance_fields(v: Any) -> list[tuple[str, str, Any]]:
    """Return ``(label, storage_name, value)`` for every instance field.

    Storage is read directly (instance ``__dict__`` and slot descriptors), so
    properties and ``__getattr__`` are never triggered. A failed read yields
    the exception instance as the value.
    """
    if isinstance(v, _SCALARS) or v is None or isinstance(v, _OPAQUE):
        return []
    t = type(v)
    raw: dict[str, Any] = {}
    try:
        d = object.__getattribute__(v, "__dict__")
    except Exception:
        d = None
    if isinstance(d, dict):
        raw.update(d)
    for cls in t.__mro__:
        slots = cls.__dict__.get("__slots__", ())
        if isinstance(slots, str):
            slots = (slots,)
        for name in slots:
            if name in ("__dict__", "__weakref__"):
                continue
            if name.startswith("__") and not name.endswith("__"):
                name = f"_{cls.__name__.lstrip('_')}{name}"
            desc = cls.__dict__.get(name)
            if desc is None or name in raw:
                continue
            try:
                raw[name] = desc.__get__(v, t)
            except AttributeError:
                continue
            except Exception as exc:  # descriptor raised something odd
                raw[name] = _ReadError(exc)
    owners = {c.__name__.lstrip("_") for c in t.__mro__}
    labels: dict[str, list[str]] = {}
    for name in raw:
        labels.setdefault(field_label(name, owners), []).append(name)
    out = []
    for label, names in labels.items():
        if len(names) == 1:
            out.append((label, names[0], raw[names[0]]))
        else:
            out.extend((n, n, raw[n]) for n in names)
    out.sort(key=lambda x: x[0])
    return out


class _ReadError:
    def __init__(self, exc: BaseException):
        self.exc = exc


def state_items(v: Any) -> Iterator[tuple[str, str, str]]:
    """Yield ``(path, rendered, kind)`` for the full state of *v*."""
    yield from basic_items(v)
    if isinstance(v, _SCALARS) or v is None:
        return
    for label, _, fv in instance_fields(v):
        if isinstance(fv, _ReadError):
            yield f"{label}.error", "true", "error"
            continue
        for leaf, rendered, kind in basic_items(fv):
            yield (label if leaf == "value" else f"{label}.{leaf}"), rendered, kind


def basic_state(v: Any) -> set[StateProperty]:
    return {StateProperty(p, r) for p, r, _ in basic_items(v)}


def value_state(v: Any) -> set[StateProperty]:
    return {StateProperty(p, r) for p, r, _ in state_items(v)}


def decode(value: str) -> Any:
    """Inverse of :func:`render` for everything but truncated strings."""
    if value.startswith('"') or value in ("true", "false", "null"):
        return json.loads(value)
    return _number(value)


def _number(text: str) -> Any:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return complex(text)
