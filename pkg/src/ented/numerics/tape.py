"""The DualTape: forward-order op records replayed backwards by hand.

Every differentiable op appends one record holding the op name, the ids of
its traced inputs, the id of its output, and a closure over the saved forward
intermediates that maps an incoming output gradient to input gradients.
``backward`` walks the records in exact reverse forward order and accumulates
gradients into a dict keyed by variable id; the accumulators start from zero
on every call.

A tape is single-owner: one tape per training step, never shared between
threads. Ops themselves are pure, so traced forward passes on disjoint tapes
are safe to run concurrently.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

# Harness self-test hook: maps op name -> gradient scale factor. Only the
# gradcheck fault-injection path ever sets this; it exists so the checker's
# "does it actually catch a wrong backward" test exercises the real recording
# machinery instead of a mock.
_BACKWARD_FAULTS: dict[str, float] = {}


@contextmanager
def inject_backward_fault(op_name: str, scale: float):
    _BACKWARD_FAULTS[op_name] = float(scale)
    try:
        yield
    finally:
        _BACKWARD_FAULTS.pop(op_name, None)


class Var:
    """A traced value: a numpy array plus its id on the owning tape."""

    __slots__ = ("value", "tape", "vid")

    def __init__(self, value: np.ndarray, tape: "Tape", vid: int):
        self.value = value
        self.tape = tape
        self.vid = vid

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.vid}, shape={self.value.shape})"


class _Record:
    __slots__ = ("op", "in_ids", "out_id", "backward")

    def __init__(self, op, in_ids, out_id, backward):
        self.op = op
        self.in_ids = in_ids
        self.out_id = out_id
        self.backward = backward


class Tape:
    def __init__(self):
        self._records: list[_Record] = []
        self._next_id = 0
        # Op names visited by the most recent backward pass, in visit order.
        # Introspection only; tests use it to pin the reverse-order invariant.
        self.last_visit_order: list[str] = []

    def new_var(self, value: np.ndarray) -> Var:
        v = Var(value, self, self._next_id)
        self._next_id += 1
        return v

    def leaf(self, value: np.ndarray) -> Var:
        """Lift a raw array onto the tape (parameters, images, constants)."""
        return self.new_var(np.asarray(value))

    def record(self, op: str, out: Var, in_vars: tuple[Var, ...], backward) -> None:
        if op in _BACKWARD_FAULTS:
            scale = _BACKWARD_FAULTS[op]
            inner = backward

            def backward(g, _inner=inner, _s=scale):
                return tuple(None if gi is None else gi * _s for gi in _inner(g))

        self._records.append(_Record(op, tuple(v.vid for v in in_vars), out.vid, backward))

    @property
    def op_names(self) -> list[str]:
        return [r.op for r in self._records]

    def backward(self, out: Var, seed: np.ndarray | None = None) -> "Grads":
        """Accumulate d(out)/d(values) for everything recorded on this tape.

        `seed` defaults to ones, which for the usual scalar loss output means
        plain gradients. Gradient accumulators are created fresh per call.
        """
        if out.tape is not self:
            raise ValueError("output Var does not belong to this tape")
        acc: dict[int, np.ndarray] = {}
        acc[out.vid] = np.ones_like(out.value) if seed is None else np.asarray(seed)
        self.last_visit_order = []
        for rec in reversed(self._records):
            g_out = acc.get(rec.out_id)
            if g_out is None:
                continue
            self.last_visit_order.append(rec.op)
            grads = rec.backward(g_out)
            for vid, g in zip(rec.in_ids, grads):
                if g is None:
                    continue
                if vid in acc:
                    acc[vid] = acc[vid] + g
                else:
                    acc[vid] = g
        return Grads(acc)


class Grads:
    """Result of one backward pass: variable id -> gradient array."""

    def __init__(self, acc: dict[int, np.ndarray]):
        self._acc = acc

    def wrt(self, var: Var) -> np.ndarray:
        """Gradient for `var`, zeros if the output did not depend on it."""
        g = self._acc.get(var.vid)
        return np.zeros_like(var.value) if g is None else g

    def __contains__(self, var: Var) -> bool:
        return var.vid in self._acc
