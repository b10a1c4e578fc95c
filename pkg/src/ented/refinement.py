"""Cross-attention latent refinement and style-code generation.

The degraded-input latent and the reference latent each attend over the
other: spatial locations are the tokens, so a location in one stream pulls
in information from everywhere in the other stream. The refined maps enter
as gated residuals (gates start at zero, so refinement begins as identity)
and the concatenated result is pooled and embedded into the style code that
drives the modulated convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import ops
from .numerics.ops import value_of


@dataclass
class RefinementParams:
    proj_lq: np.ndarray  # (c, c) 1x1 projection, input stream
    proj_ref: np.ndarray  # (c, c) 1x1 projection, reference stream
    gamma_lq: np.ndarray  # (c,) residual gate, init 0
    gamma_ref: np.ndarray  # (c,) residual gate, init 0
    psi_w: np.ndarray  # (c_out, 2c) style embedding
    psi_b: np.ndarray  # (c_out,)
    d: float  # attention normalization constant (key length)

    @staticmethod
    def init(rng: np.random.Generator, c: int, c_out: int | None = None) -> "RefinementParams":
        c_out = c if c_out is None else c_out
        std = 1.0 / np.sqrt(c)
        return RefinementParams(
            proj_lq=rng.normal(0.0, std, size=(c, c)),
            proj_ref=rng.normal(0.0, std, size=(c, c)),
            gamma_lq=np.zeros(c),
            gamma_ref=np.zeros(c),
            psi_w=rng.normal(0.0, 1.0 / np.sqrt(2 * c), size=(c_out, 2 * c)),
            psi_b=np.zeros(c_out),
            d=float(c),
        )


def scaled_dot_attention(q, k, v, d: float):
    """softmax(Q K^T / sqrt(d)) V with rows of Q, K, V as tokens.

    The softmax runs along the key axis, so each query's attention weights
    form a probability vector.
    """
    qv, kv, vv = value_of(q), value_of(k), value_of(v)
    if qv.ndim != 2 or kv.ndim != 2 or vv.ndim != 2:
        raise ShapeError("scaled_dot_attention expects matrices")
    if qv.shape[1] != kv.shape[1] or kv.shape[0] != vv.shape[0]:
        raise ShapeError(
            f"scaled_dot_attention: incompatible shapes Q{qv.shape} K{kv.shape} V{vv.shape}"
        )
    if d <= 0:
        raise ValueError("scaled_dot_attention: d must be positive")
    scores = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(d))
    return ops.matmul(ops.softmax(scores, axis=1), v)


def _project_tokens(z, proj):
    """Feature-normalize along channels, 1x1-project, return (hw, c) tokens."""
    c, h, w = value_of(z).shape
    normed = ops.feature_normalize(z, axis=0)
    projected = ops.conv1x1(normed, proj)
    return ops.transpose(ops.reshape(projected, (c, h * w)))


def cross_refine(z_lq, z_ref, params: RefinementParams):
    """Exchange information between the two latent maps.

    Each stream queries the other's projected tokens; outputs return to
    (c,h,w). Swapping the inputs swaps the outputs exactly.
    """
    shape_lq, shape_ref = value_of(z_lq).shape, value_of(z_ref).shape
    if shape_lq != shape_ref:
        raise ShapeError(f"cross_refine: shapes {shape_lq} and {shape_ref} differ")
    c, h, w = shape_lq
    t_lq = _project_tokens(z_lq, params.proj_lq)
    t_ref = _project_tokens(z_ref, params.proj_ref)
    v_lq = scaled_dot_attention(t_lq, t_ref, t_ref, params.d)
    v_ref = scaled_dot_attention(t_ref, t_lq, t_lq, params.d)
    back = lambda t: ops.reshape(ops.transpose(t), (c, h, w))
    return back(v_lq), back(v_ref)


def make_style_code(v_lq, v_ref, z_lq, z_ref, params: RefinementParams):
    """omega = Psi(pool(concat[gamma_lq*V_lq + Z_lq, gamma_ref*V_ref + Z_ref])).

    Gated residuals concatenate along channels; global average pooling
    reduces space before the linear embedding.
    """
    for a, b in ((v_lq, z_lq), (v_ref, z_ref)):
        if value_of(a).shape != value_of(b).shape:
            raise ShapeError(
                f"make_style_code: shapes {value_of(a).shape} and {value_of(b).shape} differ"
            )
    r_lq = ops.add(ops.scale_axis(v_lq, params.gamma_lq, axis=0), z_lq)
    r_ref = ops.add(ops.scale_axis(v_ref, params.gamma_ref, axis=0), z_ref)
    pooled = ops.global_avg_pool(ops.concat([r_lq, r_ref], axis=0))
    return ops.matvec(params.psi_w, pooled, params.psi_b)


def style_code_from_latents(z_lq, z_ref, params: RefinementParams, refine: bool = True):
    """Full style path: cross-refine (unless toggled off) then embed.

    With refinement off the gated residual collapses to the raw latents, so
    the style code comes from the unexchanged pair.
    """
    if refine:
        v_lq, v_ref = cross_refine(z_lq, z_ref, params)
        return make_style_code(v_lq, v_ref, z_lq, z_ref, params)
    pooled = ops.global_avg_pool(ops.concat([z_lq, z_ref], axis=0))
    return ops.matvec(params.psi_w, pooled, params.psi_b)
