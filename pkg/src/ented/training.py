"""Deterministic training loop, checkpointing, and toy-set evaluation.

Each iteration runs a discriminator Adam step on detached fakes, then a
generator Adam step whose adversarial term flows through the just-updated
discriminator held as constants. All randomness is drawn from counter-based
streams keyed by (seed, stream id, iteration, item), so a resumed run
replays exactly the batches and noise an uninterrupted run would have seen;
nothing about the random state needs to be serialized beyond the seed and
the iteration number already in the checkpoint header.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as streams
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash, from_dict, save_config, to_dict
from .degradation import bilinear_resize, degrade, load_image, make_reference, psnr, save_image, ssim
from .errors import CheckpointError, ConfigError
from .generator import DiscriminatorParams, ModelParams, discriminate, forward_restore
from .losses import (
    PerceptualFeatureNet,
    adversarial_loss,
    discriminator_loss,
    perceptual_loss,
    total_loss,
)
from .numerics import ops
from .numerics.ops import value_of
from .numerics.tape import Tape, Var
from .optim import AdamConfig, AdamState, adam_step
from .params import lift, named_arrays, named_leaves, replace_arrays
from .texture import attention_reconstruction_loss
from .vq import kmeans_reinit, reinit_due

LOG_HEADER = (
    "iteration", "adversarial", "perceptual", "quantization",
    "attention", "total", "d_loss", "event",
)


# ---------------------------------------------------------------------------
# state containers


@dataclass
class LatentBuffer:
    """Ring buffer of recent latent rows; the k-means re-init batch source."""

    data: np.ndarray  # (capacity, c)
    count: int = 0
    pos: int = 0

    @staticmethod
    def create(capacity: int, code_length: int) -> "LatentBuffer":
        return LatentBuffer(data=np.zeros((capacity, code_length)))

    def push(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64)
        cap = self.data.shape[0]
        if rows.shape[0] > cap:
            rows = rows[-cap:]
        for row in rows:
            self.data[self.pos] = row
            self.pos = (self.pos + 1) % cap
            self.count = min(self.count + 1, cap)

    def snapshot(self) -> np.ndarray:
        return self.data[: self.count].copy()


@dataclass
class TrainerState:
    model: ModelParams
    disc: DiscriminatorParams
    opt_g: AdamState
    opt_d: AdamState
    buffer: LatentBuffer
    iteration: int = 0  # last completed iteration


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    iterations: int
    out_dir: Path


# ---------------------------------------------------------------------------
# construction, dataset, checkpoint round trip


def build_models(cfg: RunConfig) -> tuple[ModelParams, DiscriminatorParams]:
    wrng = streams.stream(cfg.seed, streams.WEIGHTS)
    model = ModelParams.init(
        wrng, cfg.network,
        num_codewords=cfg.vq.num_codewords,
        vq_beta=cfg.vq.beta,
        vq_warmup=cfg.vq.warmup_iters,
        vq_reinit_period=cfg.vq.reinit_period,
    )
    disc = DiscriminatorParams.init(wrng, cfg.network)
    return model, disc


def load_dataset(data_dir, resolution: int) -> list[np.ndarray]:
    paths = sorted(Path(data_dir).glob("*.png"))
    if not paths:
        raise ConfigError(f"empty dataset: no .png images under {data_dir}")
    images = []
    for p in paths:
        img = load_image(p)
        if img.shape != (3, resolution, resolution):
            raise ConfigError(
                f"{p.name}: expected shape (3, {resolution}, {resolution}), got {img.shape}"
            )
        images.append(img)
    return images


def _float_subset(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: a for k, a in arrays.items() if np.issubdtype(a.dtype, np.floating)}


def fresh_state(cfg: RunConfig) -> TrainerState:
    model, disc = build_models(cfg)
    return TrainerState(
        model=model,
        disc=disc,
        opt_g=AdamState.init(_float_subset(named_arrays(model, "gen"))),
        opt_d=AdamState.init(_float_subset(named_arrays(disc, "disc"))),
        buffer=LatentBuffer.create(cfg.vq.buffer_capacity, cfg.network.latent_channels),
        iteration=0,
    )


def state_to_checkpoint(state: TrainerState, cfg: RunConfig) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {}
    arrays.update(named_arrays(state.model, "gen"))
    arrays.update(named_arrays(state.disc, "disc"))
    for tag, opt in (("adam_g", state.opt_g), ("adam_d", state.opt_d)):
        arrays[f"{tag}.step"] = np.array(opt.step, dtype=np.int64)
        for name, a in opt.m.items():
            arrays[f"{tag}.m.{name}"] = a
        for name, a in opt.v.items():
            arrays[f"{tag}.v.{name}"] = a
    arrays["pool.data"] = state.buffer.data
    arrays["pool.count"] = np.array(state.buffer.count, dtype=np.int64)
    arrays["pool.pos"] = np.array(state.buffer.pos, dtype=np.int64)
    # Checkpoints must not depend on where the run wrote its artifacts.
    embedded = to_dict(cfg)
    embedded.pop("paths", None)
    blob = json.dumps(embedded, sort_keys=True).encode("utf-8")
    arrays["config_json"] = np.frombuffer(blob, dtype=np.uint8)
    return Checkpoint(
        config_hash=config_hash(cfg), seed=cfg.seed,
        iteration=state.iteration, arrays=arrays,
    )


def config_from_checkpoint(ckpt: Checkpoint) -> RunConfig:
    if "config_json" not in ckpt.arrays:
        raise CheckpointError("checkpoint carries no embedded config")
    cfg = from_dict(json.loads(bytes(ckpt.arrays["config_json"].tobytes()).decode("utf-8")))
    if config_hash(cfg) != ckpt.config_hash:
        raise CheckpointError("embedded config does not match the checkpoint's config hash")
    return cfg


def state_from_checkpoint(ckpt: Checkpoint, cfg: RunConfig) -> TrainerState:
    model, disc = build_models(cfg)
    want = set(named_arrays(model, "gen")) | set(named_arrays(disc, "disc"))
    have = {k for k in ckpt.arrays if k.startswith(("gen.", "disc."))}
    if want != have:
        missing, extra = sorted(want - have), sorted(have - want)
        raise CheckpointError(f"weight records mismatch: missing {missing}, extra {extra}")
    model = replace_arrays(model, ckpt.arrays, "gen")
    disc = replace_arrays(disc, ckpt.arrays, "disc")

    def opt_state(tag: str, params: dict[str, np.ndarray]) -> AdamState:
        try:
            return AdamState(
                step=int(ckpt.arrays[f"{tag}.step"]),
                m={k: ckpt.arrays[f"{tag}.m.{k}"] for k in params},
                v={k: ckpt.arrays[f"{tag}.v.{k}"] for k in params},
            )
        except KeyError as exc:
            raise CheckpointError(f"optimizer record missing: {exc}") from exc

    opt_g = opt_state("adam_g", _float_subset(named_arrays(model, "gen")))
    opt_d = opt_state("adam_d", _float_subset(named_arrays(disc, "disc")))
    buffer = LatentBuffer(
        data=ckpt.arrays["pool.data"].copy(),
        count=int(ckpt.arrays["pool.count"]),
        pos=int(ckpt.arrays["pool.pos"]),
    )
    return TrainerState(
        model=model, disc=disc, opt_g=opt_g, opt_d=opt_d,
        buffer=buffer, iteration=ckpt.iteration,
    )


# ---------------------------------------------------------------------------
# one iteration


def sample_batch(dataset, cfg: RunConfig, iteration: int):
    """(gt, lq, ref) triplets for one iteration, deterministic by index."""
    pick = streams.stream(cfg.seed, streams.DATA, iteration)
    ids = pick.integers(len(dataset), size=cfg.batch_size)
    batch = []
    for j, i in enumerate(ids):
        gt = dataset[int(i)]
        lq = degrade(gt, cfg.degradation, streams.stream(cfg.seed, streams.DEGRADE, iteration, j))
        ref = make_reference(gt, streams.stream(cfg.seed, streams.REFERENCE, iteration, j))
        batch.append((gt, lq, ref))
    return batch


def _traced_grads(grads, traced_obj, prefix: str) -> dict[str, np.ndarray]:
    return {
        name: grads.wrt(leaf)
        for name, leaf in named_leaves(traced_obj, prefix).items()
        if isinstance(leaf, Var)
    }


def train_step(state: TrainerState, cfg: RunConfig, dataset, pnet: PerceptualFeatureNet,
               g_opt: AdamConfig, d_opt: AdamConfig, iteration: int) -> tuple:
    """Run one D step then one G step; returns the CSV log row."""
    batch = sample_batch(dataset, cfg, iteration)
    inv = 1.0 / len(batch)

    # - discriminator update: fakes from the frozen generator, usage counters
    #   shielded so only the generator pass below counts codeword hits
    shadow = dataclasses.replace(
        state.model,
        vq=dataclasses.replace(state.model.vq, usage_counts=state.model.vq.usage_counts.copy()),
    )
    fakes = [
        value_of(forward_restore(lq, ref, shadow, cfg.network, iteration=iteration).image_raw)
        for _, lq, ref in batch
    ]
    tape_d = Tape()
    disc_t = lift(state.disc, tape_d, "disc")
    d_loss = None
    for (gt, _, _), fake in zip(batch, fakes):
        term = discriminator_loss(discriminate(gt, disc_t), discriminate(fake, disc_t))
        d_loss = term if d_loss is None else ops.add(d_loss, term)
    d_loss = ops.scale(d_loss, inv)
    d_grads = _traced_grads(tape_d.backward(d_loss), disc_t, "disc")
    new_d, state.opt_d = adam_step(
        _float_subset(named_arrays(state.disc, "disc")), d_grads, state.opt_d, d_opt
    )
    state.disc = replace_arrays(state.disc, new_d, "disc")

    # - generator update: adversarial term reads the just-updated
    #   discriminator as constants; gradients flow through it to the image
    tape_g = Tape()
    model_t = lift(state.model, tape_g, "gen")
    adv_s = percep_s = q_s = att_s = None
    for gt, lq, ref in batch:
        res = forward_restore(lq, ref, model_t, cfg.network, iteration=iteration)
        # losses read the pre-clamp image so saturated pixels stay trainable
        adv = adversarial_loss(discriminate(res.image_raw, state.disc))
        percep = perceptual_loss(res.image_raw, gt, pnet)
        q = res.quant.loss if res.quant is not None else np.zeros(())
        att = attention_reconstruction_loss(
            res.c_e_list, res.c_d_list, gt, ref, cfg.network.level_ratios
        )
        adv_s = adv if adv_s is None else ops.add(adv_s, adv)
        percep_s = percep if percep_s is None else ops.add(percep_s, percep)
        q_s = q if q_s is None else ops.add(q_s, q)
        att_s = att if att_s is None else ops.add(att_s, att)
        c = cfg.network.latent_channels
        state.buffer.push(value_of(res.z_lq).reshape(c, -1).T)
    adv_m = ops.scale(adv_s, inv)
    percep_m = ops.scale(percep_s, inv)
    q_m = ops.scale(q_s, inv)
    att_m = ops.scale(att_s, inv)
    g_total = total_loss(adv_m, percep_m, q_m, att_m, cfg.loss_weights)
    g_grads = _traced_grads(tape_g.backward(g_total), model_t, "gen")
    new_g, state.opt_g = adam_step(
        _float_subset(named_arrays(state.model, "gen")), g_grads, state.opt_g, g_opt
    )
    state.model = replace_arrays(state.model, new_g, "gen")

    # - scheduled codebook refit from the latent pool
    event = ""
    if cfg.network.vq and reinit_due(state.model.vq, iteration) and state.buffer.count > 0:
        old_cw = value_of(state.model.vq.codewords)
        new_vq = kmeans_reinit(
            state.model.vq, state.buffer.snapshot(),
            iters=cfg.vq.kmeans_iters,
            rng=streams.stream(cfg.seed, streams.KMEANS, iteration),
        )
        accepted = new_vq.codewords is not old_cw
        state.model = dataclasses.replace(state.model, vq=new_vq)
        if accepted:
            # old moments describe discarded codewords
            state.opt_g.reset_entry("gen.vq.codewords")
            event = "kmeans_reinit"
        else:
            event = "kmeans_reinit_kept"

    state.iteration = iteration
    return (
        iteration,
        f"{float(value_of(adv_m)):.10g}",
        f"{float(value_of(percep_m)):.10g}",
        f"{float(value_of(q_m)):.10g}",
        f"{float(value_of(att_m)):.10g}",
        f"{float(value_of(g_total)):.10g}",
        f"{float(value_of(d_loss)):.10g}",
        event,
    )


# ---------------------------------------------------------------------------
# full run


def train(cfg: RunConfig, resume=None, progress=None) -> TrainResult:
    """Train to cfg.iterations, logging every iteration and checkpointing.

    `resume` names a checkpoint written by this function; its config hash
    must match `cfg`. `progress`, if given, is called as progress(iteration)
    after each step.
    """
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg.paths.data_dir, cfg.network.resolution)
    pnet = PerceptualFeatureNet(cfg.seed)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_hash != config_hash(cfg):
            raise CheckpointError(
                "resume config mismatch: checkpoint was written by a different run config"
            )
        state = state_from_checkpoint(ckpt, cfg)
        log_mode = "a"
    else:
        state = fresh_state(cfg)
        log_mode = "w"
    save_config(cfg, out / "config.json")
    g_opt = AdamConfig(cfg.optimizer.lr_generator, cfg.optimizer.beta1,
                       cfg.optimizer.beta2, cfg.optimizer.eps)
    d_opt = AdamConfig(cfg.optimizer.lr_discriminator, cfg.optimizer.beta1,
                       cfg.optimizer.beta2, cfg.optimizer.eps)
    log_path = out / "log.csv"
    with open(log_path, log_mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if log_mode == "w":
            writer.writerow(LOG_HEADER)
        for it in range(state.iteration + 1, cfg.iterations + 1):
            writer.writerow(train_step(state, cfg, dataset, pnet, g_opt, d_opt, it))
            if it % cfg.checkpoint_every == 0 and it != cfg.iterations:
                save_checkpoint(out / f"ckpt_{it:06d}.entd", state_to_checkpoint(state, cfg))
            if progress is not None:
                progress(it)
    final = out / "ckpt_final.entd"
    save_checkpoint(final, state_to_checkpoint(state, cfg))
    return TrainResult(checkpoint_path=final, log_path=log_path,
                       iterations=state.iteration, out_dir=out)


# ---------------------------------------------------------------------------
# inference and toy evaluation


def restore_from_state(model: ModelParams, cfg: RunConfig, lq: np.ndarray,
                       ref: np.ndarray, iteration: int) -> np.ndarray:
    res = forward_restore(lq, ref, model, cfg.network, iteration=iteration)
    return value_of(res.image)


def restore_from_checkpoint(ckpt: Checkpoint, lq: np.ndarray, ref: np.ndarray) -> np.ndarray:
    cfg = config_from_checkpoint(ckpt)
    state = state_from_checkpoint(ckpt, cfg)
    return restore_from_state(state.model, cfg, lq, ref, ckpt.iteration)


def eval_training_set(state: TrainerState, cfg: RunConfig, dataset) -> list[dict]:
    """Restore each training image from its seed-0 degradation.

    Iteration index 0 is reserved for evaluation keys; training iterations
    start at 1, so these pairs never coincide with a training batch.
    """
    rows = []
    for j, gt in enumerate(dataset):
        lq = degrade(gt, cfg.degradation, streams.stream(cfg.seed, streams.DEGRADE, 0, j))
        ref = make_reference(gt, streams.stream(cfg.seed, streams.REFERENCE, 0, j))
        out = restore_from_state(state.model, cfg, lq, ref, state.iteration)
        rows.append({
            "index": j,
            "psnr_restored": psnr(out, gt),
            "psnr_degraded": psnr(lq, gt),
            "ssim_restored": ssim(out, gt),
            "ssim_degraded": ssim(lq, gt),
        })
    return rows


def write_toy_dataset(data_dir, n: int = 4, resolution: int = 32,
                      seed: int = 0, base_res: int = 16) -> list[Path]:
    """Synthetic mid-frequency images: sharp enough that degradation hurts,
    few enough that a desk-scale run can overfit them.

    All channels share the same mean and amplitude, so the images differ
    only in spatial structure. A per-image color offset would hand the
    discriminator a trivial separating feature and aim its gradient at the
    generator as one spatially uniform push, which drives the clamped
    output head into saturation where learning stalls.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    paths = []
    for i in range(n):
        base = g.uniform(-1.0, 1.0, size=(3, base_res, base_res))
        img = bilinear_resize(base, resolution, resolution)
        img = img - img.mean(axis=(1, 2), keepdims=True)
        img = 0.5 + img * (0.45 / max(np.abs(img).max(), 1e-9))
        p = data_dir / f"toy_{i:02d}.png"
        save_image(p, img)
        paths.append(p)
    return paths
