"""Parameter-tree helpers: naming, lifting onto a tape, structural updates.

Model parameters live in nested dataclasses whose leaves are numpy arrays.
These helpers give every leaf a stable dotted name (dataclass field order,
list index), which the optimizer and the checkpoint format key on, and let
the same container be used traced (fields replaced by tape Vars) or plain.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .numerics.tape import Tape, Var


def _is_container(obj) -> bool:
    return dataclasses.is_dataclass(obj) and not isinstance(obj, type)


def named_arrays(obj, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten every ndarray leaf to a {dotted_name: array} dict.

    Iteration order is deterministic: dataclass field declaration order,
    list/tuple index order. Integer arrays are included (they checkpoint,
    the optimizer filters on dtype).
    """
    out: dict[str, np.ndarray] = {}

    def walk(node, path):
        if isinstance(node, np.ndarray):
            out[path] = node
        elif isinstance(node, Var):
            out[path] = node.value
        elif _is_container(node):
            for f in dataclasses.fields(node):
                walk(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                walk(item, f"{path}.{i}")
        # scalars / flags are structural, not tensors

    walk(obj, prefix)
    return out


def named_leaves(obj, prefix: str = "") -> dict[str, object]:
    """Like named_arrays but keeps Var leaves as Vars.

    Used after lifting to pair each traced parameter with its dotted name,
    so tape gradients can be read back into a flat {name: grad} dict.
    """
    out: dict[str, object] = {}

    def walk(node, path):
        if isinstance(node, (np.ndarray, Var)):
            out[path] = node
        elif _is_container(node):
            for f in dataclasses.fields(node):
                walk(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                walk(item, f"{path}.{i}")

    walk(obj, prefix)
    return out


def _rebuild(node, path, mapping):
    if isinstance(node, (np.ndarray, Var)):
        return mapping.get(path, node)
    if _is_container(node):
        kw = {
            f.name: _rebuild(getattr(node, f.name), f"{path}.{f.name}" if path else f.name, mapping)
            for f in dataclasses.fields(node)
        }
        return dataclasses.replace(node, **kw)
    if isinstance(node, list):
        return [_rebuild(item, f"{path}.{i}", mapping) for i, item in enumerate(node)]
    if isinstance(node, tuple):
        return tuple(_rebuild(item, f"{path}.{i}", mapping) for i, item in enumerate(node))
    return node


def replace_arrays(obj, mapping: dict[str, np.ndarray], prefix: str = ""):
    """Structural copy of `obj` with named leaves swapped in from `mapping`.

    Names missing from the mapping keep their current leaf; extra names in
    the mapping are ignored (callers validate coverage where it matters).
    """
    return _rebuild(obj, prefix, mapping)


def lift(obj, tape: Tape, prefix: str = ""):
    """Copy of `obj` with every float ndarray leaf turned into a tape leaf.

    Integer arrays (index grids, usage counters) stay plain: they carry no
    gradient and the ops layer never traces them.
    """
    floats = {
        name: tape.leaf(arr)
        for name, arr in named_arrays(obj, prefix).items()
        if np.issubdtype(arr.dtype, np.floating)
    }
    return _rebuild(obj, prefix, floats)
