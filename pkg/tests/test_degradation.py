import numpy as np
import pytest

from ented import rng as rngmod
from ented.degradation import (
    DegradationSpec,
    bilinear_resize,
    degrade,
    gaussian_blur,
    load_image,
    make_reference,
    psnr,
    quantize_levels,
    save_image,
    ssim,
)
from ented.errors import ShapeError


def _gen(seed, *key):
    return rngmod.stream(seed, rngmod.DEGRADE, *key)


def _img(seed, h=32, w=32):
    return _gen(seed, 99).uniform(0.0, 1.0, size=(3, h, w))


# ---------------------------------------------------------------- pipeline


def test_null_spec_is_bitwise_identity():
    img = _img(0)
    out = degrade(img, DegradationSpec.null(), _gen(0, 1))
    np.testing.assert_array_equal(out, img)


def test_degrade_is_deterministic_given_seed():
    img = _img(1)
    spec = DegradationSpec()
    a = degrade(img, spec, _gen(5, 2))
    b = degrade(img, spec, _gen(5, 2))
    np.testing.assert_array_equal(a, b)
    c = degrade(img, spec, _gen(6, 2))
    assert not np.array_equal(a, c)


def test_degrade_stays_in_range_and_finite():
    for seed in range(10):
        out = degrade(_img(seed), DegradationSpec(), _gen(seed, 3))
        assert np.all(np.isfinite(out))
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_psnr_decreases_monotonically_with_noise():
    img = _img(2)
    values = []
    for std in [0.0, 0.02, 0.05, 0.1, 0.2]:
        spec = DegradationSpec(blur_sigma=(0.0, 0.0), downsample=1, noise_std=(std, std), quant_levels=0)
        out = degrade(img, spec, _gen(7, 4))
        values.append(psnr(img, out))
    for a, b in zip(values, values[1:]):
        assert b < a


def test_reference_same_shape_distinct_pixels_deterministic():
    img = _img(3)
    a = make_reference(img, _gen(8, 5))
    b = make_reference(img, _gen(8, 5))
    np.testing.assert_array_equal(a, b)
    assert a.shape == img.shape
    assert not np.array_equal(a, img)
    assert a.min() >= 0.0 and a.max() <= 1.0


# ---------------------------------------------------------------- resize / blur


def test_resize_to_same_size_is_identity():
    img = _img(4)
    assert bilinear_resize(img, 32, 32) is img


def test_resize_preserves_constant_images():
    img = np.full((3, 8, 8), 0.37)
    out = bilinear_resize(img, 4, 4)
    np.testing.assert_allclose(out, 0.37, rtol=1e-12)
    up = bilinear_resize(img, 16, 16)
    np.testing.assert_allclose(up, 0.37, rtol=1e-12)


def test_resize_matches_pointwise_oracle():
    g = _gen(0, 6)
    img = g.uniform(0.0, 1.0, size=(1, 4, 4))
    out = bilinear_resize(img, 2, 2)
    # half-pixel centers at scale 2: source coord = 2*(i+0.5)/... = 2i+0.5,
    # so each output is the mean of a 2x2 block
    for y in range(2):
        for x in range(2):
            want = img[0, 2 * y : 2 * y + 2, 2 * x : 2 * x + 2].mean()
            np.testing.assert_allclose(out[0, y, x], want, rtol=1e-12)


def test_blur_preserves_mean_and_smooths():
    img = _img(5)
    out = gaussian_blur(img, 1.0)
    np.testing.assert_allclose(out.mean(), img.mean(), rtol=1e-2)
    assert out.var() < img.var()
    assert gaussian_blur(img, 0.0) is img


def test_quantize_levels_snaps_to_grid():
    img = _img(6)
    out = quantize_levels(img, 5)
    np.testing.assert_allclose(out * 4, np.round(out * 4), atol=1e-12)
    assert quantize_levels(img, 0) is img


# ---------------------------------------------------------------- metrics


def test_psnr_reference_values():
    img = _img(7)
    assert psnr(img, img.copy()) == 99.0
    b = img + 0.1  # MSE exactly 0.01
    np.testing.assert_allclose(psnr(img, b, peak=1.0), 20.0, rtol=1e-9)
    np.testing.assert_allclose(psnr(img, b), psnr(b, img), rtol=1e-12)


def test_psnr_matches_direct_definition():
    for seed in range(5):
        a, b = _img(seed), _img(seed + 100)
        mse = np.mean((a - b) ** 2)
        np.testing.assert_allclose(psnr(a, b), 10 * np.log10(1.0 / mse), rtol=1e-12)


def test_psnr_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        psnr(_img(0), _img(0, h=16, w=16))


def test_ssim_self_similarity_and_symmetry():
    a, b = _img(8), _img(9)
    np.testing.assert_allclose(ssim(a, a.copy()), 1.0, rtol=1e-12)
    np.testing.assert_allclose(ssim(a, b), ssim(b, a), rtol=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0
    assert ssim(a, b) < 1.0


def test_ssim_matches_windowed_oracle():
    g = _gen(0, 7)
    a = g.uniform(0.0, 1.0, size=(1, 8, 8))
    b = g.uniform(0.0, 1.0, size=(1, 8, 8))
    got = ssim(a, b, window=4)
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for y in range(5):
        for x in range(5):
            wa = a[0, y : y + 4, x : x + 4].ravel()
            wb = b[0, y : y + 4, x : x + 4].ravel()
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a, var_b = wa.var(), wb.var()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    np.testing.assert_allclose(got, np.mean(vals), rtol=1e-10)


def test_ssim_window_larger_than_image_rejected():
    with pytest.raises(ShapeError):
        ssim(_img(0, h=4, w=4), _img(1, h=4, w=4), window=8)


# ---------------------------------------------------------------- PNG I/O


def test_png_roundtrip_quantization_bound(tmp_path):
    img = _img(10)
    path = tmp_path / "x.png"
    save_image(path, img)
    back = load_image(path)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12


def test_png_second_roundtrip_is_exact(tmp_path):
    img = _img(11)
    p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
    save_image(p1, img)
    once = load_image(p1)
    save_image(p2, once)
    np.testing.assert_array_equal(load_image(p2), once)
