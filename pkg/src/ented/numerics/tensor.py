"""Array substrate and the global precision switch.

Tensors are plain C-contiguous numpy arrays (row-major flat storage behind a
shape), f32 in training mode and f64 in verification mode. The mode is a
process-wide switch, not a per-tensor property; everything created through
:func:`as_tensor`, :func:`zeros` or the initializers picks it up.

There is no broadcasting in the differentiable layer beyond
scalar-times-tensor and the named per-axis vector scales in ops.py.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_precision = "f64"
_checked = True


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {name!r}")
    global _precision
    _precision = name


def get_precision() -> str:
    return _precision


def default_dtype() -> np.dtype:
    return np.dtype(_DTYPES[_precision])


@contextmanager
def precision(name: str):
    """Temporarily switch the global precision (used by tests and gradcheck)."""
    old = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf rejection at tensor construction."""
    global _checked
    _checked = bool(flag)


def as_tensor(data, dtype=None, check: bool | None = None) -> np.ndarray:
    """Materialize `data` as a C-contiguous float array in the active dtype.

    In checked mode (the default) non-finite values are rejected here, at
    construction, so every downstream op may assume finite inputs.
    """
    dt = np.dtype(dtype) if dtype is not None else default_dtype()
    arr = np.ascontiguousarray(data, dtype=dt)
    if _checked if check is None else check:
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values rejected at tensor construction")
    return arr


def zeros(shape, dtype=None) -> np.ndarray:
    dt = np.dtype(dtype) if dtype is not None else default_dtype()
    return np.zeros(shape, dtype=dt)


def check_axis(axis: int, ndim: int, what: str = "tensor") -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {what} of rank {ndim}")
    return axis % ndim


def require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)
