"""Registered gradient checks for every differentiable building block.

Importing this module populates the gradcheck registry; the CLI `gradcheck`
subcommand and the acceptance tests run it. Each case builds small random
instances keyed by (seed, GRADCHECK stream, case id), so repeated runs are
reproducible and failures name the exact op.

Two quantization notes. The commitment loss contains stop-gradients, whose
whole point is that the analytic gradient differs from the derivative of
the value function; central differences on the raw loss would "fail" by
design. The registered case therefore probes the detached surrogate (the
stopped arguments frozen at their current values), whose gradients the real
loss must reproduce exactly; that equality is asserted separately in the
vq tests. The straight-through case runs the estimator with substitute
equal to source, which makes its value path smooth while still catching a
gradient leak through the substitute slot or a non-identity source path.
"""

from __future__ import annotations

import numpy as np

from . import rng as streams
from .generator import (
    DiscriminatorParams,
    ModelParams,
    ModulatedConvParams,
    NetworkConfig,
    discriminate,
    forward_restore,
    modulated_conv,
)
from .losses import (
    LossWeights,
    PerceptualFeatureNet,
    adversarial_loss,
    discriminator_loss,
    perceptual_loss,
    total_loss,
)
from .numerics import ops
from .numerics.gradcheck import GradcheckReport, check_directional, register
from .params import named_arrays, replace_arrays
from .refinement import RefinementParams, cross_refine, scaled_dot_attention, style_code_from_latents
from .texture import TextureLevel, attention_reconstruction_loss, distribute_texture, extract_texture
from .vq import straight_through


def _rngs(seed: int, case: int):
    """(instance rng, probe rng) pair for one case."""
    return (
        streams.stream(seed, streams.GRADCHECK, case, 0),
        streams.stream(seed, streams.GRADCHECK, case, 1),
    )


@register("texture_extraction")
def _texture_extraction(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 1)
    c, h, w, k = 5, 3, 4, 6
    f_ref = r.standard_normal((c, h, w))
    w_e = r.standard_normal((k, c)) / np.sqrt(c)
    proj = r.standard_normal((c, c)) / np.sqrt(c)

    def fn(w_e, proj, f_ref):
        level = TextureLevel(w_e=w_e, w_d=np.zeros((k, c)), projection=proj)
        return extract_texture(f_ref, level)

    return check_directional(
        "texture_extraction", fn, [w_e, proj, f_ref],
        rng=probe, input_names=["w_e", "projection", "f_ref"],
    )


@register("texture_distribution")
def _texture_distribution(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 2)
    c, h, w, k = 5, 3, 4, 6
    f_d = r.standard_normal((c, h, w))
    f_tex = r.standard_normal((k, c))
    w_d = r.standard_normal((k, c)) / np.sqrt(c)

    def fn(w_d, f_d, f_tex):
        level = TextureLevel(w_e=np.zeros((k, c)), w_d=w_d, projection=np.eye(c))
        return distribute_texture(f_d, f_tex, level)

    return check_directional(
        "texture_distribution", fn, [w_d, f_d, f_tex],
        rng=probe, input_names=["w_d", "f_d", "f_tex"],
    )


@register("attention_reconstruction")
def _attention_reconstruction(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 3)
    k, res, ratio = 3, 8, 2
    hw = (res // ratio) ** 2
    i_gt = r.uniform(0.0, 1.0, (3, res, res))
    i_ref = r.uniform(0.0, 1.0, (3, res, res))
    raw_e = r.standard_normal((k, hw))
    raw_d = r.standard_normal((k, hw))

    def fn(raw_e, raw_d):
        c_e = ops.softmax(raw_e, axis=1)
        c_d = ops.softmax(raw_d, axis=0)
        return attention_reconstruction_loss([c_e], [c_d], i_gt, i_ref, (ratio,))

    return check_directional(
        "attention_reconstruction", fn, [raw_e, raw_d],
        rng=probe, input_names=["extraction_logits", "distribution_logits"],
    )


@register("quantization_commitment")
def _quantization_commitment(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 4)
    n, c, beta = 6, 4, 0.25
    z = r.standard_normal((n, c))
    zq = r.standard_normal((n, c))
    z0, zq0 = z.copy(), zq.copy()  # frozen stand-ins for the stopped args

    def fn(z, zq):
        codeword_term = ops.sum_all(ops.square(ops.sub(z0, zq)))
        commit_term = ops.sum_all(ops.square(ops.sub(zq0, z)))
        return ops.add(codeword_term, ops.scale(commit_term, beta))

    return check_directional(
        "quantization_commitment", fn, [z, zq],
        rng=probe, input_names=["z", "z_q"],
    )


@register("quantization_straight_through")
def _quantization_straight_through(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 5)
    z = r.standard_normal((4, 3, 3))

    def fn(z):
        return ops.mean_all(ops.square(straight_through(z, z)))

    return check_directional("quantization_straight_through", fn, [z],
                             rng=probe, input_names=["z"])


@register("cross_attention")
def _cross_attention(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 6)
    nq, nk, c = 5, 7, 4
    q = r.standard_normal((nq, c))
    k = r.standard_normal((nk, c))
    v = r.standard_normal((nk, c))

    def fn(q, k, v):
        return scaled_dot_attention(q, k, v, float(c))

    return check_directional("cross_attention", fn, [q, k, v],
                             rng=probe, input_names=["q", "k", "v"])


@register("feature_normalize")
def _feature_normalize(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 7)
    x = r.standard_normal((5, 3, 4))

    def fn(x):
        return ops.feature_normalize(x, axis=0)

    return check_directional("feature_normalize", fn, [x], rng=probe, input_names=["x"])


@register("latent_cross_refinement")
def _latent_cross_refinement(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 8)
    c, h, w = 4, 3, 3
    z_lq = r.standard_normal((c, h, w))
    z_ref = r.standard_normal((c, h, w))
    proj_lq = r.standard_normal((c, c)) / np.sqrt(c)
    proj_ref = r.standard_normal((c, c)) / np.sqrt(c)

    def fn(z_lq, z_ref, proj_lq, proj_ref):
        params = RefinementParams(
            proj_lq=proj_lq, proj_ref=proj_ref,
            gamma_lq=np.zeros(c), gamma_ref=np.zeros(c),
            psi_w=np.zeros((c, 2 * c)), psi_b=np.zeros(c), d=float(c),
        )
        return cross_refine(z_lq, z_ref, params)

    return check_directional(
        "latent_cross_refinement", fn, [z_lq, z_ref, proj_lq, proj_ref],
        rng=probe, input_names=["z_lq", "z_ref", "proj_lq", "proj_ref"],
    )


@register("style_code")
def _style_code(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 9)
    c, h, w = 4, 3, 3
    z_lq = r.standard_normal((c, h, w))
    z_ref = r.standard_normal((c, h, w))
    proj_lq = r.standard_normal((c, c)) / np.sqrt(c)
    proj_ref = r.standard_normal((c, c)) / np.sqrt(c)
    gamma_lq = r.standard_normal(c)  # nonzero gates so the refined path carries gradient
    gamma_ref = r.standard_normal(c)
    psi_w = r.standard_normal((c, 2 * c)) / np.sqrt(2 * c)
    psi_b = r.standard_normal(c)

    def fn(z_lq, z_ref, proj_lq, proj_ref, gamma_lq, gamma_ref, psi_w, psi_b):
        params = RefinementParams(
            proj_lq=proj_lq, proj_ref=proj_ref,
            gamma_lq=gamma_lq, gamma_ref=gamma_ref,
            psi_w=psi_w, psi_b=psi_b, d=float(c),
        )
        return style_code_from_latents(z_lq, z_ref, params, refine=True)

    return check_directional(
        "style_code", fn,
        [z_lq, z_ref, proj_lq, proj_ref, gamma_lq, gamma_ref, psi_w, psi_b],
        rng=probe,
        input_names=["z_lq", "z_ref", "proj_lq", "proj_ref",
                     "gamma_lq", "gamma_ref", "psi_w", "psi_b"],
    )


@register("generator_adversarial")
def _generator_adversarial(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 10)
    cfg = NetworkConfig(resolution=16, channels=(4, 8), latent_channels=6, texture_kernels=4)
    disc = DiscriminatorParams.init(r, cfg)
    img = r.uniform(0.0, 1.0, (3, 16, 16))

    def fn(img):
        return adversarial_loss(discriminate(img, disc))

    return check_directional("generator_adversarial", fn, [img], rng=probe, input_names=["image"])


@register("discriminator_pair")
def _discriminator_pair(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 11)
    cfg = NetworkConfig(resolution=16, channels=(4, 8), latent_channels=6, texture_kernels=4)
    disc = DiscriminatorParams.init(r, cfg)
    real = r.uniform(0.0, 1.0, (3, 16, 16))
    fake = r.uniform(0.0, 1.0, (3, 16, 16))
    names = list(named_arrays(disc, "d"))
    arrays = [named_arrays(disc, "d")[n] for n in names]

    def fn(*arrs):
        d = replace_arrays(disc, dict(zip(names, arrs)), "d")
        return discriminator_loss(discriminate(real, d), discriminate(fake, d))

    return check_directional("discriminator_pair", fn, arrays, rng=probe, input_names=names)


@register("perceptual")
def _perceptual(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 12)
    net = PerceptualFeatureNet(seed)
    img = r.uniform(0.1, 0.9, (3, 16, 16))
    gt = r.uniform(0.1, 0.9, (3, 16, 16))

    def fn(img):
        return perceptual_loss(img, gt, net)

    return check_directional("perceptual", fn, [img], rng=probe, input_names=["image"])


@register("total_objective")
def _total_objective(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 13)
    parts = [r.standard_normal(()) for _ in range(4)]

    def fn(adv, percep, q, att):
        return total_loss(adv, percep, q, att, LossWeights())

    return check_directional(
        "total_objective", fn, parts,
        rng=probe, input_names=["adversarial", "perceptual", "quantization", "attention"],
    )


@register("modulated_conv")
def _modulated_conv(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 14)
    c_in, c_out, s, h, w = 3, 4, 5, 4, 4
    x = r.standard_normal((c_in, h, w))
    omega = r.standard_normal(s)
    wt = r.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(c_in * 9)
    aw = r.standard_normal((c_in, s)) / np.sqrt(s)
    ab = np.ones(c_in) + 0.1 * r.standard_normal(c_in)
    b = r.standard_normal(c_out)

    def fn(x, omega, wt, aw, ab, b):
        p = ModulatedConvParams(w=wt, b=b, affine_w=aw, affine_b=ab, demodulate=True)
        return modulated_conv(x, omega, p)

    return check_directional(
        "modulated_conv", fn, [x, omega, wt, aw, ab, b],
        rng=probe, input_names=["x", "omega", "w", "affine_w", "affine_b", "b"],
    )


@register("conv_stride1")
def _conv_stride1(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 15)
    x = r.standard_normal((3, 5, 4))
    w = r.standard_normal((4, 3, 3, 3)) / np.sqrt(27)
    b = r.standard_normal(4)

    def fn(x, w, b):
        return ops.conv2d(x, w, b, stride=1)

    return check_directional("conv_stride1", fn, [x, w, b], rng=probe, input_names=["x", "w", "b"])


@register("conv_stride2")
def _conv_stride2(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 16)
    x = r.standard_normal((3, 6, 6))
    w = r.standard_normal((4, 3, 3, 3)) / np.sqrt(27)
    b = r.standard_normal(4)

    def fn(x, w, b):
        return ops.conv2d(x, w, b, stride=2)

    return check_directional("conv_stride2", fn, [x, w, b], rng=probe, input_names=["x", "w", "b"])


@register("conv_pointwise")
def _conv_pointwise(seed: int) -> GradcheckReport:
    r, probe = _rngs(seed, 17)
    x = r.standard_normal((4, 3, 5))
    w = r.standard_normal((4, 4)) / 2.0

    def fn(x, w):
        return ops.conv1x1(x, w)

    return check_directional("conv_pointwise", fn, [x, w], rng=probe, input_names=["x", "w"])


@register("end_to_end")
def _end_to_end(seed: int) -> GradcheckReport:
    """Full restoration pass plus the weighted objective, wrt every float
    parameter. Quantization is toggled off here: its argmin step is piecewise
    constant, and its differentiable content has the dedicated cases above.
    """
    r, probe = _rngs(seed, 18)
    cfg = NetworkConfig(resolution=16, channels=(4, 8), latent_channels=6,
                        texture_kernels=4, vq=False)
    model = ModelParams.init(r, cfg, num_codewords=8)
    disc = DiscriminatorParams.init(r, cfg)
    pnet = PerceptualFeatureNet(seed)
    lq = r.uniform(0.2, 0.8, (3, 16, 16))
    ref = r.uniform(0.2, 0.8, (3, 16, 16))
    gt = r.uniform(0.2, 0.8, (3, 16, 16))
    flat = named_arrays(model, "gen")
    names = [n for n, a in flat.items() if np.issubdtype(a.dtype, np.floating)]
    arrays = [flat[n] for n in names]

    def fn(*arrs):
        m = replace_arrays(model, dict(zip(names, arrs)), "gen")
        res = forward_restore(lq, ref, m, cfg, iteration=0)
        adv = adversarial_loss(discriminate(res.image, disc))
        percep = perceptual_loss(res.image, gt, pnet)
        att = attention_reconstruction_loss(res.c_e_list, res.c_d_list, gt, ref, cfg.level_ratios)
        return total_loss(adv, percep, np.zeros(()), att, LossWeights())

    return check_directional("end_to_end", fn, arrays, tol=1e-3, rng=probe, input_names=names)
