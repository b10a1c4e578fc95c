"""Restoration network: encoders, styled decoder, and a small discriminator.

Desk-scale scaffold composing the mechanism modules. Both encoders share a
shape: three stride-2 levels whose features feed skip connections and the
texture pyramid, then a 3x3 head producing the deep latent. The decoder
walks back up, per level: a (optionally style-modulated) conv, an additive
texture distribution, an additive encoder skip, then 2x nearest upsampling.
Four independent toggles select the ablation variants: skip connections,
style modulation, codebook substitution, and latent refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import ops
from .numerics.ops import value_of
from .refinement import RefinementParams, style_code_from_latents
from .texture import TextureKernels, distribute_texture, extract_texture
from .vq import VQDictionary, maybe_apply


@dataclass(frozen=True)
class NetworkConfig:
    resolution: int = 32
    channels: tuple[int, ...] = (16, 32, 64)
    # Kept deliberately narrower than the generator: the critic only has to
    # produce one useful logit, and a wide critic wins the game so fast that
    # its gradient swamps the reconstruction terms.
    disc_channels: tuple[int, ...] = (8, 8, 8)
    latent_channels: int = 32
    texture_kernels: int = 32  # k semantic kernels per level
    skip: bool = True
    style: bool = True
    vq: bool = True
    refine: bool = True
    quantize_reference: bool = False  # plural-reading flag: also quantize the reference latent

    def __post_init__(self):
        if self.resolution % (2 ** len(self.channels)) != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by the "
                f"{len(self.channels)} stride-2 levels"
            )
        if len(self.disc_channels) < 1 or min(self.disc_channels) < 1:
            raise ConfigError("disc_channels must name at least one positive width")

    @property
    def level_ratios(self) -> tuple[int, ...]:
        """Downsample ratio of each pyramid level relative to the input."""
        return tuple(2 ** (i + 1) for i in range(len(self.channels)))

    @property
    def latent_ratio(self) -> int:
        return 2 ** len(self.channels)

    def with_toggles(self, skip=None, style=None, vq=None, refine=None) -> "NetworkConfig":
        from dataclasses import replace

        return replace(
            self,
            skip=self.skip if skip is None else skip,
            style=self.style if style is None else style,
            vq=self.vq if vq is None else vq,
            refine=self.refine if refine is None else refine,
        )


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvLayer:
    w: np.ndarray  # (c_out, c_in, k, k)
    b: np.ndarray  # (c_out,)

    @staticmethod
    def init(rng, c_in: int, c_out: int, k: int = 3, bias: float = 0.0) -> "ConvLayer":
        std = 1.0 / np.sqrt(c_in * k * k)
        return ConvLayer(
            w=rng.normal(0.0, std, size=(c_out, c_in, k, k)),
            b=np.full(c_out, float(bias)),
        )


@dataclass
class EncoderParams:
    levels: list[ConvLayer]  # stride-2 convs, one per pyramid level
    to_latent: ConvLayer  # stride-1 head onto the latent grid

    @staticmethod
    def init(rng, cfg: NetworkConfig) -> "EncoderParams":
        chans = (3,) + tuple(cfg.channels)
        levels = [ConvLayer.init(rng, chans[i], chans[i + 1]) for i in range(len(cfg.channels))]
        return EncoderParams(levels=levels, to_latent=ConvLayer.init(rng, chans[-1], cfg.latent_channels))


@dataclass
class ModulatedConvParams:
    w: np.ndarray  # (c_out, c_in, k, k) base weights
    b: np.ndarray  # (c_out,) post-conv bias (both modes)
    affine_w: np.ndarray  # (c_in, style_dim) style -> per-input-channel scale
    affine_b: np.ndarray  # (c_in,) init 1 so zero style means unit modulation
    demodulate: bool = True

    @staticmethod
    def init(rng, c_in: int, c_out: int, style_dim: int, k: int = 3) -> "ModulatedConvParams":
        std = 1.0 / np.sqrt(c_in * k * k)
        return ModulatedConvParams(
            w=rng.normal(0.0, std, size=(c_out, c_in, k, k)),
            b=np.zeros(c_out),
            affine_w=rng.normal(0.0, 1.0 / np.sqrt(style_dim), size=(c_in, style_dim)),
            affine_b=np.ones(c_in),
        )


@dataclass
class DecoderParams:
    levels: list[ModulatedConvParams]  # deepest first
    head: ConvLayer  # final conv to RGB

    @staticmethod
    def init(rng, cfg: NetworkConfig) -> "DecoderParams":
        chans = list(cfg.channels)[::-1]  # e.g. (64, 32, 16)
        ins = [cfg.latent_channels] + chans[:-1]
        levels = [
            ModulatedConvParams.init(rng, ins[i], chans[i], cfg.latent_channels)
            for i in range(len(chans))
        ]
        # bias 0.5 centers the head inside the clamp window at init
        return DecoderParams(levels=levels, head=ConvLayer.init(rng, chans[-1], 3, bias=0.5))


@dataclass
class DiscriminatorParams:
    levels: list[ConvLayer]  # stride-2 stack
    out_w: np.ndarray  # (1, c_last) readout over pooled features
    out_b: np.ndarray  # (1,)

    @staticmethod
    def init(rng, cfg: NetworkConfig) -> "DiscriminatorParams":
        chans = (3,) + tuple(cfg.disc_channels)
        levels = [ConvLayer.init(rng, chans[i], chans[i + 1])
                  for i in range(len(cfg.disc_channels))]
        c_last = cfg.disc_channels[-1]
        return DiscriminatorParams(
            levels=levels,
            out_w=rng.normal(0.0, 1.0 / np.sqrt(c_last), size=(1, c_last)),
            out_b=np.zeros(1),
        )


@dataclass
class ModelParams:
    """Everything the generator side owns (the discriminator trains apart)."""

    content_enc: EncoderParams
    texture_enc: EncoderParams
    texture: TextureKernels
    refinement: RefinementParams
    decoder: DecoderParams
    vq: VQDictionary

    @staticmethod
    def init(rng, cfg: NetworkConfig, num_codewords: int = 64,
             vq_beta: float = 0.25, vq_warmup: int = 0, vq_reinit_period: int = 0) -> "ModelParams":
        return ModelParams(
            content_enc=EncoderParams.init(rng, cfg),
            texture_enc=EncoderParams.init(rng, cfg),
            texture=TextureKernels.init(rng, cfg.channels, cfg.texture_kernels),
            refinement=RefinementParams.init(rng, cfg.latent_channels),
            decoder=DecoderParams.init(rng, cfg),
            vq=VQDictionary.init(
                rng, num_codewords, cfg.latent_channels,
                beta=vq_beta, warmup_iters=vq_warmup, reinit_period=vq_reinit_period,
            ),
        )


# ---------------------------------------------------------------------------
# forward passes


def _check_image(img, cfg: NetworkConfig, what: str):
    shape = value_of(img).shape
    if shape != (3, cfg.resolution, cfg.resolution):
        raise ShapeError(f"{what}: expected (3,{cfg.resolution},{cfg.resolution}), got {shape}")


def encode(img, p: EncoderParams):
    """Shared encoder body: per-level features plus the deep latent."""
    x = img
    feats = []
    for layer in p.levels:
        x = ops.leaky_relu(ops.conv2d(x, layer.w, layer.b, stride=2))
        feats.append(x)
    latent = ops.conv2d(x, p.to_latent.w, p.to_latent.b)
    return feats, latent


def encode_content(i_lq, params: "ModelParams", cfg: NetworkConfig):
    _check_image(i_lq, cfg, "encode_content")
    return encode(i_lq, params.content_enc)


def encode_texture(i_ref, params: "ModelParams", cfg: NetworkConfig):
    _check_image(i_ref, cfg, "encode_texture")
    return encode(i_ref, params.texture_enc)


def modulated_conv(x, omega, p: ModulatedConvParams):
    """Style-modulated 3x3 convolution with optional weight demodulation.

    Per-input-channel scales come from an affine map of the style code; with
    demodulation each output channel's effective weight is renormalized to
    unit L2 norm before the convolution.
    """
    c_out, c_in = value_of(p.w).shape[:2]
    if value_of(x).shape[0] != c_in:
        raise ShapeError(f"modulated_conv: input has {value_of(x).shape[0]} channels, weights expect {c_in}")
    scales = ops.matvec(p.affine_w, omega, p.affine_b)
    w = ops.scale_axis(p.w, scales, axis=1)
    if p.demodulate:
        norms = ops.rsqrt(ops.add_scalar(ops.sum_axes(ops.square(w), (1, 2, 3)), 1e-8))
        w = ops.scale_axis(w, norms, axis=0)
    return ops.conv2d(x, w, p.b)


def decode(z, skips, f_tex_list, omega, params: "ModelParams", cfg: NetworkConfig):
    """Latent to image; returns (image, pre-clamp image, distribution matrices).

    Levels run deepest-first; the distribution matrices come back ordered to
    match the texture list (shallowest level first), for the attention loss.
    The clamped image is the inference/metrics output; training losses use
    the pre-clamp head output, because the clamp's zero gradient outside
    [0,1] would otherwise make saturation absorbing: adversarial pressure
    can push a pixel out of range, after which no loss can pull it back.
    """
    n_levels = len(cfg.channels)
    if len(f_tex_list) != n_levels:
        raise ConfigError(f"decode: need {n_levels} texture levels, got {len(f_tex_list)}")
    if cfg.skip and len(skips) != n_levels:
        raise ConfigError(f"decode: skip connections enabled but got {len(skips)} encoder features")
    x = z
    c_d_list: list = [None] * n_levels
    for depth, level_idx in enumerate(reversed(range(n_levels))):
        conv_p = params.decoder.levels[depth]
        if cfg.style:
            x = modulated_conv(x, omega, conv_p)
        else:
            x = ops.conv2d(x, conv_p.w, conv_p.b)
        x = ops.leaky_relu(x)
        f_o, c_d = distribute_texture(x, f_tex_list[level_idx], params.texture.levels[level_idx])
        c_d_list[level_idx] = c_d
        x = ops.add(x, f_o)
        if cfg.skip:
            x = ops.add(x, skips[level_idx])
        x = ops.upsample_nearest2x(x)
    img = ops.conv2d(x, params.decoder.head.w, params.decoder.head.b)
    return ops.clamp(img, 0.0, 1.0), img, c_d_list


def discriminate(img, p: DiscriminatorParams):
    """Strided conv stack, global pooling, linear readout to a (1,) logit."""
    x = img
    for layer in p.levels:
        x = ops.leaky_relu(ops.conv2d(x, layer.w, layer.b, stride=2))
    pooled = ops.global_avg_pool(x)
    return ops.matvec(p.out_w, pooled, p.out_b)


@dataclass
class ForwardResult:
    image: object  # (3,H,W) restored image, clamped to [0,1]
    image_raw: object  # pre-clamp head output; what the training losses see
    c_e_list: list  # per-level extraction matrices, shallowest first
    c_d_list: list  # per-level distribution matrices, shallowest first
    quant: object  # QuantizationResult or None (warm-up / vq off)
    omega: object  # style code actually used (None when style off)
    z_lq: object  # normalized content latent, exactly what the quantizer saw


def forward_restore(i_lq, i_ref, params: ModelParams, cfg: NetworkConfig,
                    iteration: int = 0) -> ForwardResult:
    """Full restoration pass shared by training, inference, and gradcheck."""
    skips, z_lq = encode_content(i_lq, params, cfg)
    ref_feats, z_ref = encode_texture(i_ref, params, cfg)
    # Pin the latent scale before anything consumes it. The codebook terms
    # are gated off during warmup, so without this the encoders are free to
    # grow the latents arbitrarily and the first active quantization step
    # then lands as a gradient spike that destabilizes the whole model.
    z_lq = ops.feature_normalize(z_lq, axis=0)
    z_ref = ops.feature_normalize(z_ref, axis=0)

    f_tex_list, c_e_list = [], []
    for level_idx in range(len(cfg.channels)):
        f_tex, c_e = extract_texture(ref_feats[level_idx], params.texture.levels[level_idx])
        f_tex_list.append(f_tex)
        c_e_list.append(c_e)

    quant = None
    z_dec = z_lq
    if cfg.vq:
        z_dec, quant = maybe_apply(params.vq, z_lq, iteration)
    z_ref_style = z_ref
    if cfg.vq and cfg.quantize_reference and iteration >= params.vq.warmup_iters:
        from .vq import quantize, straight_through

        ref_q = quantize(z_ref, params.vq)
        z_ref_style = straight_through(z_ref, ref_q.quantized)

    omega = None
    if cfg.style:
        omega = style_code_from_latents(z_dec, z_ref_style, params.refinement, refine=cfg.refine)

    image, image_raw, c_d_list = decode(z_dec, skips, f_tex_list, omega, params, cfg)
    return ForwardResult(
        image=image, image_raw=image_raw, c_e_list=c_e_list, c_d_list=c_d_list,
        quant=quant, omega=omega, z_lq=z_lq,
    )
