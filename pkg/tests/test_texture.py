import math

import numpy as np
import pytest

from ented import rng as rngmod
from ented.numerics import Tape, precision
from ented.numerics import ops
from ented.numerics.gradcheck import check_directional
from ented.texture import (
    TextureKernels,
    TextureLevel,
    attention_reconstruction_loss,
    distribute_texture,
    extract_texture,
)


@pytest.fixture(autouse=True)
def _f64():
    with precision("f64"):
        yield


def _gen(seed, *key):
    return rngmod.stream(seed, rngmod.GRADCHECK, 20, *key)


def _level(g, k, c):
    std = 1.0 / np.sqrt(c)
    return TextureLevel(
        w_e=g.normal(0.0, std, size=(k, c)),
        w_d=g.normal(0.0, std, size=(k, c)),
        projection=g.normal(0.0, std, size=(c, c)),
    )


def _softmax_rows_fsum(m):
    out = np.zeros_like(m)
    for i in range(m.shape[0]):
        row = m[i] - m[i].max()
        den = math.fsum(math.exp(v) for v in row)
        out[i] = [math.exp(v) / den for v in row]
    return out


# ---------------------------------------------------------------- extraction


def test_constant_reference_gives_constant_texture_rows():
    # a spatially constant map makes every texture row the projected constant
    g = _gen(0, 1)
    c, k = 3, 4
    level = _level(g, k, c)
    const = g.normal(size=(c,))
    f_ref = np.broadcast_to(const[:, None, None], (c, 2, 3)).copy()
    f_tex, c_e = extract_texture(f_ref, level)
    want_row = level.projection @ const
    for r in range(k):
        np.testing.assert_allclose(f_tex[r], want_row, rtol=1e-10)
    np.testing.assert_allclose(c_e.sum(axis=1), 1.0, rtol=1e-12)


def test_single_location_extraction():
    g = _gen(0, 2)
    c, k = 3, 5
    level = _level(g, k, c)
    f_ref = g.normal(size=(c, 1, 1))
    f_tex, c_e = extract_texture(f_ref, level)
    np.testing.assert_array_equal(c_e, np.ones((k, 1)))
    want = level.projection @ f_ref[:, 0, 0]
    for r in range(k):
        np.testing.assert_allclose(f_tex[r], want, rtol=1e-12)


def test_extraction_matches_term_by_term_oracle():
    for seed in range(6):
        g = _gen(seed, 3)
        c, h, w, k = 2, 2, 2, 2
        level = _level(g, k, c)
        f_ref = g.normal(size=(c, h, w))
        f_tex, c_e = extract_texture(f_ref, level)

        flat = f_ref.reshape(c, h * w)
        # attention logits see channel-normalized features; values use raw ones
        norm = np.zeros_like(flat)
        for s in range(h * w):
            mu = math.fsum(flat[cc, s] for cc in range(c)) / c
            den = math.sqrt(math.fsum(flat[cc, s] ** 2 for cc in range(c)) + 1e-8)
            for cc in range(c):
                norm[cc, s] = (flat[cc, s] - mu) / den
        logits = np.zeros((k, h * w))
        for r in range(k):
            for s in range(h * w):
                logits[r, s] = math.fsum(level.w_e[r, cc] * norm[cc, s] for cc in range(c))
        ce_want = _softmax_rows_fsum(logits)
        proj = np.zeros((c, h * w))
        for co in range(c):
            for s in range(h * w):
                proj[co, s] = math.fsum(level.projection[co, ci] * flat[ci, s] for ci in range(c))
        ftex_want = np.zeros((k, c))
        for r in range(k):
            for co in range(c):
                ftex_want[r, co] = math.fsum(ce_want[r, s] * proj[co, s] for s in range(h * w))

        np.testing.assert_allclose(c_e, ce_want, rtol=1e-10)
        np.testing.assert_allclose(f_tex, ftex_want, rtol=1e-10)


def test_extraction_invariant_to_spatial_permutation():
    g = _gen(1, 4)
    c, k = 3, 4
    level = _level(g, k, c)
    f_ref = g.normal(size=(c, 2, 3))
    f_tex, _ = extract_texture(f_ref, level)
    perm = g.permutation(6)
    shuffled = f_ref.reshape(c, 6)[:, perm].reshape(c, 2, 3)
    f_tex_p, _ = extract_texture(shuffled, level)
    np.testing.assert_allclose(f_tex, f_tex_p, atol=1e-12)


# ---------------------------------------------------------------- distribution


def test_single_kernel_distribution_broadcasts_texture_row():
    g = _gen(0, 5)
    c = 3
    level = _level(g, 1, c)
    f_d = g.normal(size=(c, 2, 2))
    f_tex = g.normal(size=(1, c))
    f_o, c_d = distribute_texture(f_d, f_tex, level)
    np.testing.assert_array_equal(c_d, np.ones((1, 4)))
    for y in range(2):
        for x in range(2):
            np.testing.assert_allclose(f_o[:, y, x], f_tex[0], rtol=1e-12)


def test_zero_texture_distributes_to_zero():
    g = _gen(0, 6)
    level = _level(g, 3, 2)
    f_o, _ = distribute_texture(g.normal(size=(2, 2, 2)), np.zeros((3, 2)), level)
    np.testing.assert_array_equal(f_o, np.zeros((2, 2, 2)))


def test_distribution_matches_term_by_term_oracle():
    for seed in range(6):
        g = _gen(seed, 7)
        c, h, w, k = 2, 2, 2, 3
        level = _level(g, k, c)
        f_d = g.normal(size=(c, h, w))
        f_tex = g.normal(size=(k, c))
        f_o, c_d = distribute_texture(f_d, f_tex, level)

        flat = f_d.reshape(c, h * w)
        norm = np.zeros_like(flat)
        for s in range(h * w):
            mu = math.fsum(flat[cc, s] for cc in range(c)) / c
            den = math.sqrt(math.fsum(flat[cc, s] ** 2 for cc in range(c)) + 1e-8)
            for cc in range(c):
                norm[cc, s] = (flat[cc, s] - mu) / den
        logits = np.zeros((k, h * w))
        for r in range(k):
            for s in range(h * w):
                logits[r, s] = math.fsum(level.w_d[r, cc] * norm[cc, s] for cc in range(c))
        cd_want = _softmax_rows_fsum(logits.T).T  # softmax per column
        fo_want = np.zeros((c, h * w))
        for co in range(c):
            for s in range(h * w):
                fo_want[co, s] = math.fsum(f_tex[r, co] * cd_want[r, s] for r in range(k))

        np.testing.assert_allclose(c_d, cd_want, rtol=1e-10)
        np.testing.assert_allclose(f_o.reshape(c, h * w), fo_want, rtol=1e-10)


def test_distribution_output_in_texture_convex_hull():
    for seed in range(5):
        g = _gen(seed, 8)
        c, k = 3, 4
        level = _level(g, k, c)
        f_d = g.normal(size=(c, 3, 3))
        f_tex = g.normal(size=(k, c)) * 2.0
        f_o, _ = distribute_texture(f_d, f_tex, level)
        lo = f_tex.min(axis=0)[:, None, None] - 1e-6
        hi = f_tex.max(axis=0)[:, None, None] + 1e-6
        assert np.all(f_o >= lo) and np.all(f_o <= hi)


def test_probability_structure_over_many_inputs():
    for seed in range(100):
        g = _gen(seed, 9)
        c, k = 3, 5
        level = _level(g, k, c)
        _, c_e = extract_texture(g.normal(size=(c, 2, 3)) * 5.0, level)
        _, c_d = distribute_texture(g.normal(size=(c, 2, 3)) * 5.0, g.normal(size=(k, c)), level)
        assert np.all(c_e >= 0) and np.all(c_d >= 0)
        np.testing.assert_allclose(c_e.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(c_d.sum(axis=0), 1.0, atol=1e-6)


# ---------------------------------------------------------------- reconstruction loss


def test_identity_attention_reconstruction_is_zero():
    g = _gen(0, 10)
    img = g.uniform(0.0, 1.0, size=(3, 4, 4))
    eye = np.eye(4)  # k = hw at ratio 2
    loss = attention_reconstruction_loss([eye], [eye], img, img, [2])
    assert float(loss) < 1e-12


def test_zero_target_reconstruction_loss_is_mean_abs():
    g = _gen(0, 11)
    ref = g.uniform(0.0, 1.0, size=(3, 4, 4))
    c_e = _softmax_rows_fsum(g.normal(size=(5, 4)))
    c_d_logits = g.normal(size=(5, 4))
    c_d = _softmax_rows_fsum(c_d_logits.T).T
    from ented.degradation import bilinear_resize

    recon = bilinear_resize(ref, 2, 2).reshape(3, 4) @ c_e.T @ c_d
    loss = attention_reconstruction_loss([c_e], [c_d], np.zeros((3, 4, 4)), ref, [2])
    np.testing.assert_allclose(float(loss), np.mean(np.abs(recon)), rtol=1e-12)


def test_reconstruction_loss_matches_direct_evaluation():
    from ented.degradation import bilinear_resize

    for seed in range(5):
        g = _gen(seed, 12)
        gt = g.uniform(0.0, 1.0, size=(3, 8, 8))
        ref = g.uniform(0.0, 1.0, size=(3, 8, 8))
        ratios = [2, 4]
        ces, cds, want = [], [], 0.0
        for ratio in ratios:
            hw = (8 // ratio) ** 2
            k = 3
            c_e = _softmax_rows_fsum(g.normal(size=(k, hw)))
            c_d = _softmax_rows_fsum(g.normal(size=(k, hw)).T).T
            ces.append(c_e)
            cds.append(c_d)
            gtf = bilinear_resize(gt, 8 // ratio, 8 // ratio).reshape(3, hw)
            reff = bilinear_resize(ref, 8 // ratio, 8 // ratio).reshape(3, hw)
            want += np.mean(np.abs(gtf - reff @ c_e.T @ c_d))
        got = attention_reconstruction_loss(ces, cds, gt, ref, ratios)
        np.testing.assert_allclose(float(got), want, rtol=1e-10)


# ---------------------------------------------------------------- gradients


def test_extraction_gradients():
    for seed in range(4):
        g = _gen(seed, 13)

        def fn(f_ref, w_e, proj):
            level = TextureLevel(w_e=w_e, w_d=np.zeros_like(w_e), projection=proj)
            f_tex, c_e = extract_texture(f_ref, level)
            return f_tex, c_e

        report = check_directional(
            "extract_texture",
            fn,
            [g.normal(size=(3, 2, 2)), g.normal(size=(4, 3)), g.normal(size=(3, 3))],
            rng=_gen(seed, 14),
        )
        assert report.passed, report.line()


def test_distribution_gradients():
    for seed in range(4):
        g = _gen(seed, 15)

        def fn(f_d, f_tex, w_d):
            level = TextureLevel(w_e=np.zeros_like(w_d), w_d=w_d, projection=np.zeros((3, 3)))
            f_o, c_d = distribute_texture(f_d, f_tex, level)
            return f_o, c_d

        report = check_directional(
            "distribute_texture",
            fn,
            [g.normal(size=(3, 2, 2)), g.normal(size=(4, 3)), g.normal(size=(4, 3))],
            rng=_gen(seed, 16),
        )
        assert report.passed, report.line()


def test_reconstruction_loss_gradients():
    gt = _gen(0, 17).uniform(0.0, 1.0, size=(3, 4, 4))
    ref = _gen(1, 17).uniform(0.0, 1.0, size=(3, 4, 4))
    for seed in range(4):
        g = _gen(seed, 18)

        def fn(ce_logits, cd_logits):
            c_e = ops.softmax(ce_logits, axis=1)
            c_d = ops.softmax(cd_logits, axis=0)
            return attention_reconstruction_loss([c_e], [c_d], gt, ref, [2])

        report = check_directional(
            "attention_reconstruction_loss",
            fn,
            [g.normal(size=(3, 4)), g.normal(size=(3, 4))],
            rng=_gen(seed, 19),
        )
        assert report.passed, report.line()


def test_kernel_container_init_shapes():
    g = _gen(0, 20)
    kernels = TextureKernels.init(g, (4, 8), k=5)
    assert len(kernels.levels) == 2
    assert kernels.levels[0].w_e.shape == (5, 4)
    assert kernels.levels[1].w_d.shape == (5, 8)
    assert kernels.levels[1].projection.shape == (8, 8)
    with pytest.raises(ValueError):
        TextureKernels.init(g, (4,), k=0)
