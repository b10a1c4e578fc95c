import math

import numpy as np
import pytest

from ented import rng as rngmod
from ented.numerics import precision
from ented.numerics import ops
from ented.numerics.gradcheck import check_directional
from ented.losses import (
    LossWeights,
    PerceptualFeatureNet,
    adversarial_loss,
    discriminator_loss,
    perceptual_loss,
    total_loss,
)


@pytest.fixture(autouse=True)
def _f64():
    with precision("f64"):
        yield


def _gen(seed, *key):
    return rngmod.stream(seed, rngmod.GRADCHECK, 50, *key)


# ---------------------------------------------------------------- adversarial


def test_adversarial_loss_reference_points():
    assert abs(float(adversarial_loss(np.zeros(1))) - math.log(2.0)) < 1e-12
    assert float(adversarial_loss(np.full(1, 60.0))) < 1e-20
    # logit 1 against a higher-precision evaluation of log(1 + exp(-1))
    want = float(np.log1p(np.exp(np.longdouble(-1.0))))
    assert abs(float(adversarial_loss(np.ones(1))) - want) < 1e-14


def test_adversarial_loss_monotone_decreasing():
    logits = np.sort(_gen(0, 1).normal(size=50) * 5.0)
    vals = [float(adversarial_loss(np.array([v]))) for v in logits]
    for a, b in zip(vals, vals[1:]):
        assert b < a


def test_discriminator_loss_prefers_separated_logits():
    confused = float(discriminator_loss(np.zeros(1), np.zeros(1)))
    sharp = float(discriminator_loss(np.full(1, 5.0), np.full(1, -5.0)))
    assert sharp < confused
    assert abs(confused - 2.0 * math.log(2.0)) < 1e-12


# ---------------------------------------------------------------- perceptual


def test_perceptual_loss_zero_on_identical_and_symmetric():
    net = PerceptualFeatureNet(seed=0)
    g = _gen(0, 2)
    a = g.uniform(0.0, 1.0, size=(3, 16, 16))
    b = g.uniform(0.0, 1.0, size=(3, 16, 16))
    assert float(perceptual_loss(a, a.copy(), net)) == 0.0
    np.testing.assert_allclose(
        float(perceptual_loss(a, b, net)), float(perceptual_loss(b, a, net)), rtol=1e-12
    )
    assert float(perceptual_loss(a, b, net)) > 0.0


def test_perceptual_net_is_deterministic_and_frozen():
    n1, n2 = PerceptualFeatureNet(seed=3), PerceptualFeatureNet(seed=3)
    for (w1, b1), (w2, b2) in zip(n1.layers, n2.layers):
        np.testing.assert_array_equal(w1, w2)
    n3 = PerceptualFeatureNet(seed=4)
    assert not np.array_equal(n1.layers[0][0], n3.layers[0][0])


def _direct_conv(x, w, b, stride):
    c_out, c_in, kh, kw = w.shape
    pad = kh // 2
    h, wd = x.shape[1:]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for i in range(c_in):
                    for ky in range(kh):
                        for kx in range(kw):
                            sy = y * stride + ky - pad
                            sx = xx * stride + kx - pad
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc += w[o, i, ky, kx] * x[i, sy, sx]
                out[o, y, xx] = acc + b[o]
    return out


def test_perceptual_loss_matches_tap_by_tap_oracle():
    net = PerceptualFeatureNet(seed=1)
    g = _gen(0, 3)
    a = g.uniform(0.0, 1.0, size=(3, 8, 8))
    b = g.uniform(0.0, 1.0, size=(3, 8, 8))
    got = float(perceptual_loss(a, b, net))

    def taps(img):
        feats, x = [], img
        for (w, bias), stride in zip(net.layers, net.STRIDES):
            x = _direct_conv(x, w, bias, stride)
            x = np.where(x > 0, x, 0.2 * x)
            feats.append(x)
        return feats

    want = math.fsum(np.mean(np.abs(fa - fb)) for fa, fb in zip(taps(a), taps(b)))
    np.testing.assert_allclose(got, want, rtol=1e-10)


# ---------------------------------------------------------------- total


def test_total_loss_paper_weighting():
    w = LossWeights()
    assert (w.adv, w.percep, w.q, w.att) == (1.5, 1.0, 1.0, 15.0)
    got = float(total_loss(np.asarray(1.0), np.asarray(1.0), np.asarray(1.0), np.asarray(1.0), w))
    assert got == 18.5
    assert float(total_loss(np.asarray(0.0), np.asarray(0.0), np.asarray(0.0), np.asarray(0.0), w)) == 0.0


def test_total_loss_matches_dot_product_and_is_linear():
    for seed in range(5):
        g = _gen(seed, 4)
        parts = g.uniform(0.1, 2.0, size=4)
        weights = LossWeights(*g.uniform(0.1, 3.0, size=4))
        got = float(total_loss(*[np.asarray(p) for p in parts], weights))
        want = float(np.dot(parts, [weights.adv, weights.percep, weights.q, weights.att]))
        np.testing.assert_allclose(got, want, rtol=1e-12)
        doubled = float(
            total_loss(np.asarray(2 * parts[0]), *[np.asarray(p) for p in parts[1:]], weights)
        )
        np.testing.assert_allclose(doubled - got, weights.adv * parts[0], rtol=1e-9)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(adv=-0.1)


# ---------------------------------------------------------------- gradients


def test_adversarial_loss_gradient():
    for seed in range(4):
        report = check_directional(
            "adversarial_loss",
            adversarial_loss,
            [_gen(seed, 5).normal(size=(1,))],
            rng=_gen(seed, 6),
        )
        assert report.passed, report.line()


def test_perceptual_loss_gradient():
    net = PerceptualFeatureNet(seed=2)
    for seed in range(3):
        g = _gen(seed, 7)
        report = check_directional(
            "perceptual_loss",
            lambda a, b: perceptual_loss(a, b, net),
            [g.uniform(0.2, 0.8, size=(3, 8, 8)), g.uniform(0.2, 0.8, size=(3, 8, 8))],
            rng=_gen(seed, 8),
        )
        assert report.passed, report.line()


def test_total_loss_gradient():
    w = LossWeights()
    for seed in range(4):
        g = _gen(seed, 9)
        report = check_directional(
            "total_loss",
            lambda a, p, q, t: total_loss(a, p, q, t, w),
            [g.uniform(0.1, 2.0, size=()) for _ in range(4)],
            rng=_gen(seed, 10),
        )
        assert report.passed, report.line()
