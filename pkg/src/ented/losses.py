"""Loss assembly: adversarial, perceptual, and the weighted total.

The quantization and attention-reconstruction terms are computed by their
mechanism modules; this module owns the generator/discriminator adversarial
pair, the fixed-feature perceptual distance, and the weighted sum.

The perceptual distance runs through a small conv net with fixed random
weights instead of a pretrained classifier: random projections preserve
the loss's structure (L1 over multi-scale nonlinear feature taps) while
keeping the build dependency-free. This is an intentional, documented
substitution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .numerics import ops
from .numerics.ops import value_of
from .rng import PERCEPTUAL, stream


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.5
    percep: float = 1.0
    q: float = 1.0
    att: float = 15.0

    def __post_init__(self):
        if min(self.adv, self.percep, self.q, self.att) < 0:
            raise ValueError("loss weights must be nonnegative")


def adversarial_loss(logit):
    """Non-saturating generator loss log(1 + exp(-D(G(x)))), softplus form."""
    return ops.mean_all(ops.softplus(ops.neg(logit)))


def discriminator_loss(real_logit, fake_logit):
    """Standard non-saturating pair: softplus(-D(real)) + softplus(D(fake)).

    The source material states only the generator term; this is the usual
    companion objective for that setup.
    """
    real_term = ops.mean_all(ops.softplus(ops.neg(real_logit)))
    fake_term = ops.mean_all(ops.softplus(fake_logit))
    return ops.add(real_term, fake_term)


class PerceptualFeatureNet:
    """Fixed 4-layer conv stack with an activation tap after each layer.

    Weights are drawn once from a seeded stream and never trained; the net
    is a deterministic feature projector, not a learned model.
    """

    CHANNELS = (8, 16, 16, 16)
    STRIDES = (1, 2, 1, 2)

    def __init__(self, seed: int = 0):
        rng = stream(seed, PERCEPTUAL)
        self.layers = []
        c_in = 3
        for c_out in self.CHANNELS:
            std = 1.0 / np.sqrt(c_in * 9)
            w = rng.normal(0.0, std, size=(c_out, c_in, 3, 3))
            b = np.zeros(c_out)
            self.layers.append((w, b))
            c_in = c_out

    def taps(self, img):
        """Activation maps after each layer, shallest first."""
        feats = []
        x = img
        for (w, b), stride in zip(self.layers, self.STRIDES):
            x = ops.leaky_relu(ops.conv2d(x, w, b, stride=stride))
            feats.append(x)
        return feats


def perceptual_loss(i_sr, i_gt, net: PerceptualFeatureNet):
    """Sum over taps of the mean absolute feature difference."""
    if value_of(i_sr).shape != value_of(i_gt).shape:
        raise ShapeError(
            f"perceptual_loss: shapes {value_of(i_sr).shape} and {value_of(i_gt).shape} differ"
        )
    total = None
    for fa, fb in zip(net.taps(i_sr), net.taps(i_gt)):
        term = ops.mean_abs(ops.sub(fa, fb))
        total = term if total is None else ops.add(total, term)
    return total


def total_loss(adv, percep, q, att, w: LossWeights):
    """Weighted sum of the four parts; any part may be a traced scalar."""
    total = ops.scale(adv, w.adv)
    total = ops.add(total, ops.scale(percep, w.percep))
    total = ops.add(total, ops.scale(q, w.q))
    total = ops.add(total, ops.scale(att, w.att))
    return total
