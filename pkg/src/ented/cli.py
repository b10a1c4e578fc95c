"""Command-line entry points.

Subcommands: `train` (full loop with logging and checkpoints), `restore`
(single image through a checkpoint), `eval` (PSNR/SSIM over a directory of
triplets named <stem>_lq.png / <stem>_ref.png / <stem>_gt.png), `ablate`
(the five-configuration toggle grid at shared seed and data), and
`gradcheck` (the registered gradient suite; `--inject-fault` corrupts one
backward pass to prove the harness catches it).

The environment variable ENTED_SEED, when set, overrides the config seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import RunConfig, apply_env_seed, load_config
from .degradation import load_image, psnr, save_image, ssim
from .errors import EntedError
from .numerics.gradcheck import REGISTRY, run_registered
from .numerics.tape import inject_backward_fault
from .training import (
    eval_training_set,
    load_dataset,
    restore_from_checkpoint,
    state_from_checkpoint,
    train,
)

# Table-mirror toggle grid: (name, skip, style, vq, refine)
ABLATION_GRID = (
    ("model_1", False, True, True, False),
    ("model_2", True, False, True, False),
    ("model_3", True, True, False, False),
    ("model_4", True, True, True, False),
    ("ented", True, True, True, True),
)


def _load_run_config(path) -> RunConfig:
    return apply_env_seed(load_config(path))


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    res = train(cfg, resume=args.resume)
    print(f"trained to iteration {res.iterations}")
    print(f"checkpoint: {res.checkpoint_path}")
    print(f"log: {res.log_path}")
    return 0


def cmd_restore(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    lq = load_image(args.input)
    ref = load_image(args.ref)
    out = restore_from_checkpoint(ckpt, lq, ref)
    save_image(args.out, out)
    print(f"wrote {args.out}")
    return 0


def _find_triplets(directory: Path):
    """(stem, lq, ref, gt) for complete triplets; plus the incomplete stems."""
    stems = {}
    for p in sorted(directory.glob("*.png")):
        for suffix in ("_lq", "_ref", "_gt"):
            if p.stem.endswith(suffix):
                stems.setdefault(p.stem[: -len(suffix)], {})[suffix] = p
    complete, incomplete = [], []
    for stem in sorted(stems):
        parts = stems[stem]
        if set(parts) == {"_lq", "_ref", "_gt"}:
            complete.append((stem, parts["_lq"], parts["_ref"], parts["_gt"]))
        else:
            incomplete.append((stem, sorted(set(("_lq", "_ref", "_gt")) - set(parts))))
    return complete, incomplete


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    directory = Path(args.dir)
    triplets, incomplete = _find_triplets(directory)
    for stem, missing in incomplete:
        print(f"warning: skipping {stem!r}: missing {', '.join(missing)}", file=sys.stderr)
    if not triplets:
        print(f"error: no complete (_lq, _ref, _gt) triplets in {directory}", file=sys.stderr)
        return 1
    rows = []
    for stem, lq_p, ref_p, gt_p in triplets:
        restored = restore_from_checkpoint(ckpt, load_image(lq_p), load_image(ref_p))
        gt = load_image(gt_p)
        rows.append((stem, psnr(restored, gt), ssim(restored, gt)))
    with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("name", "psnr", "ssim"))
        for stem, p, s in rows:
            writer.writerow((stem, f"{p:.6f}", f"{s:.6f}"))
        writer.writerow((
            "mean",
            f"{sum(r[1] for r in rows) / len(rows):.6f}",
            f"{sum(r[2] for r in rows) / len(rows):.6f}",
        ))
    print(f"wrote {args.out_csv} ({len(rows)} images)")
    return 0


def cmd_ablate(args) -> int:
    import dataclasses

    base = _load_run_config(args.config)
    out_root = Path(base.paths.out_dir)
    results = []
    for name, skip, style, vq, refine in ABLATION_GRID:
        cfg = dataclasses.replace(
            base,
            network=base.network.with_toggles(skip=skip, style=style, vq=vq, refine=refine),
            paths=dataclasses.replace(base.paths, out_dir=str(out_root / "ablate" / name)),
        )
        res = train(cfg)
        ckpt = load_checkpoint(res.checkpoint_path)
        state = state_from_checkpoint(ckpt, cfg)
        rows = eval_training_set(state, cfg, load_dataset(cfg.paths.data_dir, cfg.network.resolution))
        mean_psnr = sum(r["psnr_restored"] for r in rows) / len(rows)
        mean_ssim = sum(r["ssim_restored"] for r in rows) / len(rows)
        results.append((name, skip, style, vq, refine, mean_psnr, mean_ssim))
        print(f"{name}: psnr {mean_psnr:.3f} ssim {mean_ssim:.4f}")
    report = out_root / "ablation.csv"
    with open(report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("name", "skip", "style", "vq", "refine", "psnr", "ssim"))
        for name, skip, style, vq, refine, p, s in results:
            writer.writerow((name, skip, style, vq, refine, f"{p:.6f}", f"{s:.6f}"))
    print(f"wrote {report}")
    return 0


def cmd_gradcheck(args) -> int:
    from . import suite  # noqa: F401  (importing registers the cases)

    def run() -> int:
        reports = run_registered(seeds=args.seeds)
        failures = 0
        for rep in reports:
            print(rep.line())
            failures += 0 if rep.passed else 1
        print(f"{len(reports)} checks covering {len(REGISTRY)} registered cases; "
              f"{failures} failed")
        return 1 if failures else 0

    if args.inject_fault:
        with inject_backward_fault(args.inject_fault, 1.01):
            return run()
    return run()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ented",
        description="Reference-based blind face restoration, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("restore", help="restore one image through a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="degraded input PNG")
    p.add_argument("--ref", required=True, help="reference PNG")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("eval", help="PSNR/SSIM over a directory of triplets")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dir", required=True, help="directory of *_lq/_ref/_gt.png triplets")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train the five-toggle grid and compare")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the registered gradient suite")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--inject-fault", default=None, metavar="OP",
                   help="scale OP's backward by 1.01 to prove the suite catches it")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except EntedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
