"""Neural texture extraction and distribution with attention supervision.

A level's extraction kernels summarize the reference feature map into k
semantic texture vectors: attention over *where* in the reference each
kernel looks (rows of the extraction matrix are probability vectors over
spatial locations). The distribution kernels then spread those k vectors
back over the target's spatial layout (columns of the distribution matrix
are probability vectors over kernels). The reconstruction loss drives the
two attention maps to compose into something that rebuilds the downsampled
ground truth from the downsampled reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .degradation import bilinear_resize
from .errors import ShapeError
from .numerics import ops
from .numerics.ops import value_of


@dataclass
class TextureLevel:
    """Per-pyramid-level kernels: extraction, distribution, 1x1 projection."""

    w_e: np.ndarray  # (k, c) extraction kernels
    w_d: np.ndarray  # (k, c) distribution kernels
    projection: np.ndarray  # (c, c) channel mix applied to reference features


@dataclass
class TextureKernels:
    levels: list[TextureLevel] = field(default_factory=list)

    @staticmethod
    def init(rng: np.random.Generator, channels: tuple[int, ...], k: int) -> "TextureKernels":
        """Gaussian init scaled 1/sqrt(c) so pre-softmax logits stay O(1)."""
        if k < 1:
            raise ValueError("texture kernel count must be >= 1")
        levels = []
        for c in channels:
            std = 1.0 / np.sqrt(c)
            levels.append(
                TextureLevel(
                    w_e=rng.normal(0.0, std, size=(k, c)),
                    w_d=rng.normal(0.0, std, size=(k, c)),
                    projection=rng.normal(0.0, std, size=(c, c)),
                )
            )
        return TextureKernels(levels=levels)


def extract_texture(f_ref, level: TextureLevel):
    """Summarize a (c,h,w) reference feature map into k texture vectors.

    Returns (F_tex (k,c), extraction matrix (k,hw) with rows summing to 1).
    """
    c, h, w = value_of(f_ref).shape
    k, ck = value_of(level.w_e).shape
    if ck != c:
        raise ShapeError(f"extract_texture: kernels expect {ck} channels, feature map has {c}")
    # Logits come from normalized features so their scale is fixed by the
    # kernels alone; raw conv features are small enough that the softmax
    # would otherwise sit near uniform with vanishing gradients.
    flat = ops.reshape(ops.feature_normalize(f_ref, axis=0), (c, h * w))
    c_e = ops.softmax(ops.matmul(level.w_e, flat), axis=1)
    projected = ops.conv1x1(f_ref, level.projection)
    proj_flat = ops.reshape(projected, (c, h * w))
    f_tex = ops.matmul(c_e, ops.transpose(proj_flat))
    return f_tex, c_e


def distribute_texture(f_d, f_tex, level: TextureLevel):
    """Spread k texture vectors over a (c,h,w) target layout.

    Returns (F_o (c,h,w), distribution matrix (k,hw) with columns summing
    to 1).
    """
    c, h, w = value_of(f_d).shape
    k, ck = value_of(level.w_d).shape
    if ck != c:
        raise ShapeError(f"distribute_texture: kernels expect {ck} channels, feature map has {c}")
    kt, ct = value_of(f_tex).shape
    if kt != k or ct != c:
        raise ShapeError(f"distribute_texture: texture {(kt, ct)} does not match kernels {(k, c)}")
    # normalized for the same reason as the extraction logits
    flat = ops.reshape(ops.feature_normalize(f_d, axis=0), (c, h * w))
    c_d = ops.softmax(ops.matmul(level.w_d, flat), axis=0)
    f_o = ops.matmul(ops.transpose(f_tex), c_d)
    return ops.reshape(f_o, (c, h, w)), c_d


def attention_reconstruction_loss(c_e_list, c_d_list, i_gt: np.ndarray, i_ref: np.ndarray, ratios):
    """Sum over levels of mean |I_gt_down - I_ref_down . C_e^T . C_d|.

    The images are constants here (gradients flow only into the attention
    matrices); each level downsamples both bilinearly by its ratio and
    flattens to (3, hw).
    """
    if not (len(c_e_list) == len(c_d_list) == len(ratios)):
        raise ShapeError(
            f"attention_reconstruction_loss: got {len(c_e_list)} extraction, "
            f"{len(c_d_list)} distribution matrices for {len(ratios)} levels"
        )
    _, gh, gw = i_gt.shape
    loss = None
    for c_e, c_d, ratio in zip(c_e_list, c_d_list, ratios):
        gt_flat = bilinear_resize(i_gt, gh // ratio, gw // ratio).reshape(3, -1)
        ref_flat = bilinear_resize(i_ref, gh // ratio, gw // ratio).reshape(3, -1)
        if value_of(c_e).shape[1] != ref_flat.shape[1]:
            raise ShapeError(
                f"attention_reconstruction_loss: extraction width {value_of(c_e).shape[1]} "
                f"!= downsampled reference width {ref_flat.shape[1]}"
            )
        if value_of(c_d).shape[1] != gt_flat.shape[1]:
            raise ShapeError(
                f"attention_reconstruction_loss: distribution width {value_of(c_d).shape[1]} "
                f"!= downsampled target width {gt_flat.shape[1]}"
            )
        recon = ops.matmul(ops.matmul(ref_flat, ops.transpose(c_e)), c_d)
        term = ops.mean_abs(ops.sub(gt_flat, recon))
        loss = term if loss is None else ops.add(loss, term)
    return loss
