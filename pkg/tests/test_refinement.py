import math

import numpy as np
import pytest

from ented import rng as rngmod
from ented.numerics import precision
from ented.numerics import ops
from ented.numerics.gradcheck import check_directional
from ented.refinement import (
    RefinementParams,
    cross_refine,
    make_style_code,
    scaled_dot_attention,
    style_code_from_latents,
)


@pytest.fixture(autouse=True)
def _f64():
    with precision("f64"):
        yield


def _gen(seed, *key):
    return rngmod.stream(seed, rngmod.GRADCHECK, 40, *key)


def _params(g, c, zero_gamma=True):
    p = RefinementParams.init(g, c)
    if not zero_gamma:
        p.gamma_lq = g.normal(size=(c,))
        p.gamma_ref = g.normal(size=(c,))
    return p


# ---------------------------------------------------------------- attention


def test_single_key_returns_that_value_for_every_query():
    g = _gen(0, 1)
    q = g.normal(size=(3, 4))
    k = g.normal(size=(1, 4))
    v = g.normal(size=(1, 4))
    out = scaled_dot_attention(q, k, v, d=4.0)
    for row in range(3):
        np.testing.assert_allclose(out[row], v[0], rtol=1e-12)


def test_identical_keys_give_uniform_attention():
    g = _gen(0, 2)
    q = g.normal(size=(2, 3))
    k = np.tile(g.normal(size=(1, 3)), (5, 1))
    v = g.normal(size=(5, 3))
    out = scaled_dot_attention(q, k, v, d=3.0)
    for row in range(2):
        np.testing.assert_allclose(out[row], v.mean(axis=0), rtol=1e-12)


def test_attention_matches_direct_oracle():
    for seed in range(6):
        g = _gen(seed, 3)
        q = g.normal(size=(2, 4))
        k = g.normal(size=(3, 4))
        v = g.normal(size=(3, 4))
        d = 4.0
        out = scaled_dot_attention(q, k, v, d)
        for i in range(2):
            scores = [math.fsum(q[i, t] * k[j, t] for t in range(4)) / math.sqrt(d) for j in range(3)]
            m = max(scores)
            den = math.fsum(math.exp(s - m) for s in scores)
            weights = [math.exp(s - m) / den for s in scores]
            want = np.zeros(4)
            for j in range(3):
                want += weights[j] * v[j]
            np.testing.assert_allclose(out[i], want, rtol=1e-10)


def test_attention_rows_are_probability_vectors():
    for seed in range(100):
        g = _gen(seed, 4)
        q = g.normal(size=(4, 3)) * 5.0
        k = g.normal(size=(6, 3)) * 5.0
        scores = ops.softmax(ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(3.0)), axis=1)
        assert np.all(scores >= 0)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- cross refine


def test_equal_inputs_identity_projections_give_equal_outputs():
    g = _gen(0, 5)
    c = 3
    p = _params(g, c)
    p.proj_lq = np.eye(c)
    p.proj_ref = np.eye(c)
    z = g.normal(size=(c, 2, 2))
    v_lq, v_ref = cross_refine(z, z.copy(), p)
    np.testing.assert_allclose(np.asarray(v_lq), np.asarray(v_ref), rtol=1e-12)


def test_single_location_returns_other_streams_projection():
    g = _gen(0, 6)
    c = 4
    p = _params(g, c)
    z_lq = g.normal(size=(c, 1, 1))
    z_ref = g.normal(size=(c, 1, 1))
    v_lq, v_ref = cross_refine(z_lq, z_ref, p)

    def project(z, proj):
        x = z[:, 0, 0]
        mu = x.mean()
        den = np.sqrt(np.sum(x * x) + 1e-8)
        return proj @ ((x - mu) / den)

    np.testing.assert_allclose(np.asarray(v_lq)[:, 0, 0], project(z_ref, p.proj_ref), rtol=1e-10)
    np.testing.assert_allclose(np.asarray(v_ref)[:, 0, 0], project(z_lq, p.proj_lq), rtol=1e-10)


def test_swap_symmetry_with_shared_projection():
    # the exchange mechanism is symmetric; per-stream parameters are made
    # equal so swapping inputs must swap outputs exactly
    g = _gen(0, 7)
    c = 3
    p = _params(g, c)
    p.proj_ref = p.proj_lq.copy()
    a = g.normal(size=(c, 2, 2))
    b = g.normal(size=(c, 2, 2))
    v1, v2 = cross_refine(a, b, p)
    w1, w2 = cross_refine(b, a, p)
    np.testing.assert_array_equal(np.asarray(v1), np.asarray(w2))
    np.testing.assert_array_equal(np.asarray(v2), np.asarray(w1))


def test_cross_refine_matches_composed_oracle():
    for seed in range(5):
        g = _gen(seed, 8)
        c, h, w = 2, 2, 2
        p = _params(g, c)
        z_lq = g.normal(size=(c, h, w))
        z_ref = g.normal(size=(c, h, w))
        v_lq, _ = cross_refine(z_lq, z_ref, p)

        def tokens(z, proj):
            flat = z.reshape(c, h * w)
            mu = flat.mean(axis=0, keepdims=True)
            den = np.sqrt((flat * flat).sum(axis=0, keepdims=True) + 1e-8)
            return (proj @ ((flat - mu) / den)).T  # (hw, c)

        t_lq = tokens(z_lq, p.proj_lq)
        t_ref = tokens(z_ref, p.proj_ref)
        want = np.zeros((h * w, c))
        for i in range(h * w):
            scores = t_lq[i] @ t_ref.T / math.sqrt(p.d)
            e = np.exp(scores - scores.max())
            weights = e / math.fsum(e)
            want[i] = weights @ t_ref
        np.testing.assert_allclose(np.asarray(v_lq).reshape(c, h * w).T, want, rtol=1e-9)


# ---------------------------------------------------------------- style code


def test_zero_gates_make_style_code_ignore_refined_maps():
    g = _gen(0, 9)
    c = 3
    p = _params(g, c)  # gammas are zero
    z_lq = g.normal(size=(c, 2, 2))
    z_ref = g.normal(size=(c, 2, 2))
    w1 = make_style_code(g.normal(size=(c, 2, 2)), g.normal(size=(c, 2, 2)), z_lq, z_ref, p)
    w2 = make_style_code(g.normal(size=(c, 2, 2)) * 9.0, g.normal(size=(c, 2, 2)) * 9.0, z_lq, z_ref, p)
    np.testing.assert_array_equal(np.asarray(w1), np.asarray(w2))


def test_zero_embedding_returns_bias():
    g = _gen(0, 10)
    c = 3
    p = _params(g, c)
    p.psi_w = np.zeros_like(p.psi_w)
    p.psi_b = g.normal(size=(c,))
    z = g.normal(size=(c, 2, 2))
    out = make_style_code(z, z, z, z, p)
    np.testing.assert_array_equal(np.asarray(out), p.psi_b)


def test_style_code_matches_direct_oracle():
    for seed in range(5):
        g = _gen(seed, 11)
        c = 3
        p = _params(g, c, zero_gamma=False)
        v_lq, v_ref = g.normal(size=(c, 2, 2)), g.normal(size=(c, 2, 2))
        z_lq, z_ref = g.normal(size=(c, 2, 2)), g.normal(size=(c, 2, 2))
        got = make_style_code(v_lq, v_ref, z_lq, z_ref, p)
        r_lq = p.gamma_lq[:, None, None] * v_lq + z_lq
        r_ref = p.gamma_ref[:, None, None] * v_ref + z_ref
        pooled = np.concatenate([r_lq, r_ref]).mean(axis=(1, 2))
        want = p.psi_w @ pooled + p.psi_b
        np.testing.assert_allclose(np.asarray(got), want, rtol=1e-12)


def test_refine_toggle_off_uses_raw_latents():
    g = _gen(0, 12)
    c = 3
    p = _params(g, c, zero_gamma=False)
    z_lq = g.normal(size=(c, 2, 2))
    z_ref = g.normal(size=(c, 2, 2))
    off = style_code_from_latents(z_lq, z_ref, p, refine=False)
    pooled = np.concatenate([z_lq, z_ref]).mean(axis=(1, 2))
    np.testing.assert_allclose(np.asarray(off), p.psi_w @ pooled + p.psi_b, rtol=1e-12)
    on = style_code_from_latents(z_lq, z_ref, p, refine=True)
    assert not np.allclose(np.asarray(on), np.asarray(off))


# ---------------------------------------------------------------- gradients


def test_attention_gradients():
    for seed in range(4):
        g = _gen(seed, 13)
        report = check_directional(
            "scaled_dot_attention",
            lambda q, k, v: scaled_dot_attention(q, k, v, d=4.0),
            [g.normal(size=(3, 4)), g.normal(size=(5, 4)), g.normal(size=(5, 4))],
            rng=_gen(seed, 14),
        )
        assert report.passed, report.line()


def test_cross_refine_gradients():
    for seed in range(4):
        g = _gen(seed, 15)
        base = _params(g, 3)

        def fn(z_lq, z_ref, proj_lq, proj_ref):
            p = RefinementParams(
                proj_lq=proj_lq, proj_ref=proj_ref,
                gamma_lq=base.gamma_lq, gamma_ref=base.gamma_ref,
                psi_w=base.psi_w, psi_b=base.psi_b, d=base.d,
            )
            return cross_refine(z_lq, z_ref, p)

        report = check_directional(
            "cross_refine",
            fn,
            [g.normal(size=(3, 2, 2)), g.normal(size=(3, 2, 2)),
             g.normal(size=(3, 3)), g.normal(size=(3, 3))],
            rng=_gen(seed, 16),
        )
        assert report.passed, report.line()


def test_style_path_gradients():
    for seed in range(4):
        g = _gen(seed, 17)
        base = _params(g, 3)

        def fn(z_lq, z_ref, gamma_lq, gamma_ref, psi_w, psi_b):
            p = RefinementParams(
                proj_lq=base.proj_lq, proj_ref=base.proj_ref,
                gamma_lq=gamma_lq, gamma_ref=gamma_ref,
                psi_w=psi_w, psi_b=psi_b, d=base.d,
            )
            return style_code_from_latents(z_lq, z_ref, p, refine=True)

        report = check_directional(
            "style_code",
            fn,
            [g.normal(size=(3, 2, 2)), g.normal(size=(3, 2, 2)),
             g.normal(size=(3,)), g.normal(size=(3,)),
             g.normal(size=(3, 6)), g.normal(size=(3,))],
            rng=_gen(seed, 18),
        )
        assert report.passed, report.line()
