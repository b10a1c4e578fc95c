"""Central-difference verification of the hand-written backward passes.

The checker probes directional derivatives: for a scalarized op output it
compares the analytic dot(gradient, direction) from the tape against
(f(x + h u) - f(x - h u)) / 2h evaluated by the untraced forward path. This
is a Jacobian-vector product check, so it stays cheap even for the full
end-to-end composite, and the probe directions are independent of the
backward implementation under test.

All probing runs in f64; non-finite values encountered during probing fail
the check with a diagnostic rather than propagating.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tape import Tape
from .tensor import precision


@dataclass
class GradcheckReport:
    name: str
    tol: float
    per_input: dict[str, float] = field(default_factory=dict)
    failure: str | None = None

    @property
    def max_rel(self) -> float:
        return max(self.per_input.values()) if self.per_input else float("nan")

    @property
    def passed(self) -> bool:
        return self.failure is None and self.per_input and self.max_rel <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = self.failure if self.failure else f"max_rel={self.max_rel:.3e}"
        return f"{status} {self.name}: {detail} (tol {self.tol:g})"


def _rel_err(a: float, n: float, floor: float = 1e-8) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


# Failure marker for an instance whose evaluation point sits on a kink, so
# no finite-difference probe can be trusted there. The runner responds by
# redrawing the instance; anything else treats it as a plain failure.
NONSMOOTH = "no smooth probe point found"


def check_directional(
    name: str,
    fn: Callable,
    inputs: list[np.ndarray],
    wrt: list[int] | None = None,
    step: float = 1e-5,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    n_probes: int = 2,
    input_names: list[str] | None = None,
) -> GradcheckReport:
    """Check `fn`'s registered backward against central differences.

    `fn` maps arrays/Vars to one output or a tuple of outputs; outputs are
    scalarized with fixed random projections. `wrt` selects which inputs are
    differentiable (default: all). Reports the max relative error per input.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    wrt = list(range(len(inputs))) if wrt is None else list(wrt)
    names = input_names or [f"input{i}" for i in range(len(inputs))]
    report = GradcheckReport(name=name, tol=tol)

    with precision("f64"):
        inputs = [np.asarray(x, dtype=np.float64) for x in inputs]

        outs = fn(*inputs)
        outs = outs if isinstance(outs, tuple) else (outs,)
        projs = [rng.standard_normal(np.shape(o)) for o in outs]

        def scalar(args) -> float:
            outs = fn(*args)
            outs = outs if isinstance(outs, tuple) else (outs,)
            total = 0.0
            for p, o in zip(projs, outs):
                o = np.asarray(o, dtype=np.float64)
                if not np.all(np.isfinite(o)):
                    raise FloatingPointError("non-finite value during probing")
                total += float(np.vdot(p, o))
            return total

        tape = Tape()
        traced = [tape.leaf(x) for x in inputs]
        t_outs = fn(*traced)
        t_outs = t_outs if isinstance(t_outs, tuple) else (t_outs,)
        loss = None
        from . import ops  # late import: ops depends on tape, not on the checker

        for p, o in zip(projs, t_outs):
            term = ops.sum_all(ops.mul(o, p.astype(np.float64)))
            loss = term if loss is None else ops.add(loss, term)
        grads = tape.backward(loss)

        def at(i: int, u: np.ndarray, h: float) -> float:
            moved = list(inputs)
            moved[i] = inputs[i] + h * u
            return scalar(moved)

        try:
            base = scalar(inputs)
            for i in wrt:
                worst = 0.0
                accepted = 0
                attempts = 0
                while accepted < n_probes and attempts < 3 * n_probes:
                    attempts += 1
                    u = rng.standard_normal(inputs[i].shape)
                    u /= max(np.linalg.norm(u), 1e-12)
                    analytic = float(np.vdot(grads.wrt(traced[i]), u))
                    f_plus = at(i, u, step)
                    f_minus = at(i, u, -step)
                    numeric = (f_plus - f_minus) / (2.0 * step)
                    err = _rel_err(analytic, numeric)
                    if err > tol:
                        # A large error means either a wrong gradient or a
                        # probe interval that straddles a kink (rectifier
                        # corner, clamp edge). Straddles put the one-sided
                        # quotients on opposite slopes, so they disagree with
                        # each other; a wrong gradient under a smooth value
                        # function leaves them in agreement. Only the smooth
                        # kind counts against the op; straddled probes are
                        # redrawn so the check measures the gradient, not the
                        # probe's luck.
                        fwd = (f_plus - base) / step
                        bwd = (base - f_minus) / step
                        if _rel_err(fwd, bwd) > max(tol, err / 4.0):
                            continue
                    accepted += 1
                    worst = max(worst, err)
                if accepted == 0:
                    report.failure = f"{names[i]}: {NONSMOOTH}"
                    report.per_input[names[i]] = float("inf")
                    break
                report.per_input[names[i]] = worst
        except FloatingPointError as exc:
            report.failure = f"diagnostic failure: {exc}"
    return report


# Registry of named gradient checks. Each entry takes (seed) and returns a
# report; the CLI suite and the acceptance tests enumerate it for coverage.
REGISTRY: dict[str, Callable[[int], GradcheckReport]] = {}


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn

    return deco


def run_registered(names: list[str] | None = None, seeds: int = 10) -> list[GradcheckReport]:
    """Run each registered check over `seeds` seeds, keeping the worst result.

    An instance whose random draw lands an activation on a kink (reported as
    NONSMOOTH) is replaced by a deterministically reseeded one: the check is
    about gradient correctness where the function is differentiable, and a
    probe point where it is not cannot speak to that either way.
    """
    results = []
    for name in names or sorted(REGISTRY):
        case = REGISTRY[name]
        worst: GradcheckReport | None = None
        for seed in range(seeds):
            rep = case(seed)
            bumped = seed
            for _ in range(2):
                if not (rep.failure and NONSMOOTH in rep.failure):
                    break
                bumped += 104729
                rep = case(bumped)
            if worst is None or not rep.passed or (worst.passed and rep.max_rel > worst.max_rel):
                if worst is None or worst.passed:
                    worst = rep
        results.append(worst)
    return results
