"""High-quality codebook: nearest-codeword substitution of degraded latents.

The dictionary swaps each latent vector for its nearest codeword (L2, ties
to the lowest index). Training couples the two sides through the
quantization loss: the codeword-pull term updates the codebook, the
beta-weighted commitment term updates the encoder, and the straight-through
estimator carries decoder gradients past the discrete substitution.

The codebook is periodically re-estimated by k-means over recent latents;
a re-init is only accepted when it strictly lowers distortion on the batch
it was fit to, so re-initialization can never make the fit worse.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ShapeError
from .numerics import ops
from .numerics.ops import value_of


@dataclass
class VQDictionary:
    codewords: np.ndarray  # (K, c)
    beta: float = 0.25
    warmup_iters: int = 0
    reinit_period: int = 0  # 0 disables periodic re-init
    usage_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        k = value_of(self.codewords).shape[0]
        if k < 1:
            raise ValueError("codebook must hold at least one codeword")
        if self.usage_counts.shape != (k,):
            self.usage_counts = np.zeros(k, dtype=np.int64)

    @staticmethod
    def init(rng: np.random.Generator, num_codewords: int, code_length: int, **kw) -> "VQDictionary":
        cw = rng.normal(0.0, 1.0 / np.sqrt(code_length), size=(num_codewords, code_length))
        return VQDictionary(codewords=cw, **kw)


@dataclass
class QuantizationResult:
    quantized: object  # (c,h,w) map of exact codeword rows (Var when traced)
    indices: np.ndarray  # (h, w) int64
    loss: object  # scalar quantization loss (Var when traced)


def _to_vectors(z):
    """(c,h,w) map -> (hw,c) row-per-location matrix, plus the shape."""
    c, h, w = value_of(z).shape
    return ops.transpose(ops.reshape(z, (c, h * w))), (c, h, w)


def _to_map(rows, shape):
    c, h, w = shape
    return ops.reshape(ops.transpose(rows), (c, h, w))


def quantization_loss(z_lq, z_q, beta: float):
    """sum ||sg[z] - z_q||^2 + beta * ||sg[z_q] - z||^2 over all locations.

    The stop-gradients split the pull: the first term moves codewords toward
    encoder outputs, the second commits encoder outputs to their codewords.
    """
    if value_of(z_lq).shape != value_of(z_q).shape:
        raise ShapeError(
            f"quantization_loss: shapes {value_of(z_lq).shape} and {value_of(z_q).shape} differ"
        )
    pull = ops.sum_all(ops.square(ops.sub(ops.stop_gradient(z_lq), z_q)))
    commit = ops.sum_all(ops.square(ops.sub(ops.stop_gradient(z_q), z_lq)))
    return ops.add(pull, ops.scale(commit, beta))


def quantize(z_lq, d: VQDictionary) -> QuantizationResult:
    """Replace every latent vector with its nearest codeword.

    Ties break to the lowest index. Increments the dictionary's usage
    counters as a side effect.
    """
    rows, shape = _to_vectors(z_lq)
    c = shape[0]
    k, ck = value_of(d.codewords).shape
    if ck != c:
        raise ShapeError(f"quantize: code length {ck} does not match latent channels {c}")
    idx = _kernels.nearest_rows(np.asarray(value_of(rows), dtype=np.float64),
                                np.asarray(value_of(d.codewords), dtype=np.float64))
    np.add.at(d.usage_counts, idx, 1)
    chosen = ops.gather_rows(d.codewords, idx)
    loss = quantization_loss(rows, chosen, d.beta)
    return QuantizationResult(
        quantized=_to_map(chosen, shape),
        indices=idx.reshape(shape[1], shape[2]),
        loss=loss,
    )


def straight_through(z_lq, quantized):
    """Forward the quantized map, hand the incoming gradient to the encoder."""
    return ops.straight_through(z_lq, quantized)


def maybe_apply(d: VQDictionary, z_lq, iteration: int):
    """Warm-up gate: identity before `warmup_iters`, quantization after.

    Returns (feature map for the decoder, QuantizationResult or None). The
    map is the straight-through output once the gate is open.
    """
    if iteration < d.warmup_iters:
        return z_lq, None
    result = quantize(z_lq, d)
    return straight_through(z_lq, result.quantized), result


def reinit_due(d: VQDictionary, iteration: int) -> bool:
    """Periodic schedule: first event one period after the warm-up gate."""
    if d.reinit_period <= 0 or iteration <= d.warmup_iters:
        return False
    return (iteration - d.warmup_iters) % d.reinit_period == 0


# ---------------------------------------------------------------------------
# k-means re-estimation


def distortion(points: np.ndarray, codewords: np.ndarray) -> float:
    """Total squared distance from each point to its nearest codeword."""
    idx = _kernels.nearest_rows(points, codewords)
    return float(np.sum((points - codewords[idx]) ** 2))


def _kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all points already covered exactly; duplicate a random point
            centers[i] = points[rng.integers(n)]
            continue
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def lloyd_kmeans(points: np.ndarray, k: int, iters: int, rng: np.random.Generator):
    """k-means++ seeding then Lloyd iterations.

    Returns (centroids, within-cluster-sum-of-squares history), one history
    entry per iteration, measured after that iteration's assign/update pair.
    Empty clusters are re-seeded onto a random data point, which cannot
    raise the following assignment's distortion.
    """
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("lloyd_kmeans: need a nonempty (N,c) matrix of points")
    centers = _kmeanspp_seed(points, k, rng)
    history = []
    for _ in range(iters):
        idx = _kernels.nearest_rows(points, centers)
        for j in range(k):
            mask = idx == j
            if mask.any():
                centers[j] = points[mask].mean(axis=0)
            else:
                centers[j] = points[rng.integers(points.shape[0])]
        history.append(distortion(points, centers))
    return centers, history


def kmeans_reinit(d: VQDictionary, batch_latents: np.ndarray, iters: int = 10,
                  rng: np.random.Generator | None = None) -> VQDictionary:
    """Re-estimate the codebook from recent latents, keeping it if better.

    When the batch has fewer points than codewords, the point set is padded
    with slightly perturbed copies so every cluster can seed. The refit is
    accepted only if it strictly lowers batch distortion; otherwise the
    existing codebook is kept (so a batch that already sits exactly on the
    codewords leaves them unchanged). Usage counters reset either way.
    """
    if batch_latents.ndim != 2 or batch_latents.shape[0] == 0:
        raise ValueError("kmeans_reinit: batch of latents is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    cw = np.asarray(value_of(d.codewords), dtype=np.float64)
    k, c = cw.shape
    if batch_latents.shape[1] != c:
        raise ShapeError(
            f"kmeans_reinit: latents have length {batch_latents.shape[1]}, codebook {c}"
        )
    points = np.asarray(batch_latents, dtype=np.float64)
    if points.shape[0] < k:
        extra = points[rng.integers(points.shape[0], size=k - points.shape[0])]
        points = np.concatenate([points, extra + rng.normal(0.0, 1e-3, size=extra.shape)])
    centers, _ = lloyd_kmeans(points, k, iters, rng)
    before = distortion(np.asarray(batch_latents, dtype=np.float64), cw)
    after = distortion(np.asarray(batch_latents, dtype=np.float64), centers)
    new_cw = centers if after < before else cw
    return replace(d, codewords=new_cw, usage_counts=np.zeros(k, dtype=np.int64))
