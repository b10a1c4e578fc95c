"""Adam optimizer over flat name -> array parameter dicts.

Pure functional: a step consumes (params, grads, state) and returns fresh
dicts, so checkpoint/resume equivalence reduces to serializing the state.
Parameters without a gradient this step still decay their moments, keeping
the update history independent of which loss terms happened to be active.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def init(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            step=0,
            m={k: np.zeros_like(np.asarray(a), dtype=np.float64) for k, a in params.items()},
            v={k: np.zeros_like(np.asarray(a), dtype=np.float64) for k, a in params.items()},
        )

    def reset_entry(self, name: str) -> None:
        """Zero the moments of one parameter (used after codebook refits)."""
        self.m[name] = np.zeros_like(self.m[name])
        self.v[name] = np.zeros_like(self.v[name])


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update. Missing grads are treated as zero."""
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        update = cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)
        new_params[name] = p - update
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)
