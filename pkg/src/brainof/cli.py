"""``brainof`` command line: data generation, pretraining, finetuning and diagnostics.

Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 I/O error.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .diagnostics import TOLERANCE, run_suite
from .errors import BrainOFError, InputError
from .model import BrainOF, LinearHead
from .mtfm import mask_plan, mtfm_forward, perturb
from .numerics import save_npy
from .signal import generate_synthetic, load_dataset, normalize, save_dataset
from .smoe import route_stat_rows, write_route_stats
from .train import finetune, make_streams, occlusion_importance, pretrain, stream


def _config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"finetune.seed={args.seed}"]
    return RunConfig.load(args.config, overrides)


def _out(args):
    out = Path(args.out or f"runs/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _generate(cfg, seed):
    samples = []
    for modality in cfg.data.modalities:
        samples += generate_synthetic(
            modality, cfg.data.n_samples, seed, cfg.data.class_balance, cfg.data.marker_channels
        )
    return samples


def _dataset(cfg, path=None, seed=None):
    """Labelled samples from ``path`` (or ``data.path``), otherwise freshly generated."""
    path = path or cfg.data.path
    if path:
        return load_dataset(path)
    return _generate(cfg, cfg.train.seed if seed is None else seed)


def _model_from(args, cfg):
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        return ckpt, ckpt.model
    return None, BrainOF(cfg.model, gamma=cfg.train.gamma, seed=cfg.train.seed)


def _print(doc):
    print(json.dumps(doc, indent=2, sort_keys=True))


# -- commands ------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _config(args)
    out = _out(args)
    samples = _generate(cfg, cfg.train.seed)
    save_dataset(out, samples, {"seed": cfg.train.seed, "modalities": cfg.data.modalities})
    _print({"out": str(out), "n_samples": len(samples)})


def cmd_pretrain(args):
    cfg = _config(args)
    out = _out(args)
    signals = [normalize(s) for s, _ in _dataset(cfg)]
    ckpt, model = _model_from(args, cfg)
    optimizer, start = None, 0
    if ckpt is not None:
        cfg.model = ckpt.config.model
        optimizer = ckpt.optimizer(model.named_parameters(), cfg.train.betas, cfg.train.eps, cfg.train.weight_decay)
        start = ckpt.step
    history, optimizer = pretrain(model, signals, cfg.train, optimizer, out / "metrics.csv", start)
    step = history[-1].step if history else start
    save_checkpoint(out / "checkpoint", model, cfg, optimizer, step=step)
    final = history[-1].loss_total if history else None
    _print({"checkpoint": str(out / "checkpoint"), "steps": len(history), "final_loss_total": final})


def cmd_reconstruct(args):
    cfg = _config(args)
    out = _out(args)
    ckpt, model = _model_from(args, cfg)
    if ckpt is not None:
        cfg.model = ckpt.config.model
    rng = stream(cfg.train.seed, "masks")
    signals = [normalize(s) for s, _ in _dataset(cfg)]
    written = 0
    for s in signals:
        plan = mask_plan(s, cfg.model.patch_len, rng, mean=cfg.train.mask_mean, std=cfg.train.mask_std)
        result = mtfm_forward(model, [s], [plan], cfg.train.alpha, cfg.train.smooth_l1_beta, track_load=False)
        save_npy(out / f"{s.sample_id}.original.npy", s.values)
        save_npy(out / f"{s.sample_id}.perturbed.npy", perturb(s, plan).values)
        save_npy(out / f"{s.sample_id}.reconstructed.npy", result.outputs[0].reconstruction)
        written += 1
    _print({"out": str(out), "n_samples": written})


def _split(cfg, samples, seed):
    if cfg.data.test_path:
        return samples, load_dataset(cfg.data.test_path)
    if cfg.data.test_fraction > 0:
        order = stream(seed, "split").permutation(len(samples))
        n_test = max(1, int(round(cfg.data.test_fraction * len(samples))))
        return [samples[i] for i in order[n_test:]], [samples[i] for i in order[:n_test]]
    return samples, None


def cmd_finetune(args):
    cfg = _config(args)
    out = _out(args)
    ckpt, model = _model_from(args, cfg)
    if ckpt is not None:
        cfg.model = ckpt.config.model
    ft = cfg.finetune
    train, test = _split(cfg, _dataset(cfg, seed=ft.seed), ft.seed)
    xs = [normalize(s) for s, _ in train]
    ys = [label for _, label in train]
    kw = {}
    if test is not None:
        kw = {"test_samples": [normalize(s) for s, _ in test], "test_targets": [label for _, label in test]}
    n_out = ft.n_classes if ft.task == "classification" else 1
    head = LinearHead(cfg.model.d_model, n_out, seed=ft.seed)
    history = finetune(model, head, xs, ys, ft, clip_norm=cfg.train.clip, metrics_path=out / "metrics.csv", **kw)
    save_checkpoint(out / "checkpoint", model, cfg, head=head)
    final = {m.split: m for m in history if m.epoch == ft.epochs}
    report = {
        "task": ft.task,
        "mode": ft.mode,
        "epochs": ft.epochs,
        "pretrained_from": args.checkpoint,
        "final": {
            split: {"loss": m.loss, "accuracy": m.accuracy, "balanced_accuracy": m.balanced_accuracy, "mae": m.mae}
            for split, m in final.items()
        },
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print(report)


def cmd_gradcheck(args):
    cfg = _config(args)
    out = _out(args)
    results = run_suite(cfg.train.seed)
    report = {
        "tolerance": TOLERANCE,
        "passed": all(r.passed for r in results),
        "modules": {r.name: {"worst_rel_error": r.worst, "passed": r.passed} for r in results},
    }
    (out / "gradcheck.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print(report)
    return 0 if report["passed"] else 2


def cmd_route_stats(args):
    cfg = _config(args)
    out = _out(args)
    ckpt, model = _model_from(args, cfg)
    if ckpt is not None:
        cfg.model = ckpt.config.model
    signals = [normalize(s) for s, _ in _dataset(cfg)]
    model.reset_router_loads()
    for start in range(0, len(signals), cfg.train.batch_size):
        model.latents(make_streams(model, signals[start:start + cfg.train.batch_size]))
    step = ckpt.step if ckpt is not None else 0
    write_route_stats(out / "route_stats.csv", route_stat_rows(step, model.routers))
    _print({"out": str(out / "route_stats.csv"), "layers": len(model.routers)})


def cmd_occlude(args):
    cfg = _config(args)
    out = _out(args)
    if not args.checkpoint:
        raise InputError("occlude needs --checkpoint from a finetune run")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.head is None:
        raise InputError(f"{args.checkpoint} has no task head; run finetune first")
    ft = ckpt.config.finetune
    samples = _dataset(cfg)
    scores = occlusion_importance(
        ckpt.model, ckpt.head, [normalize(s) for s, _ in samples], [label for _, label in samples], task=ft.task
    )
    with open(out / "occlusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "score"])
        for c, score in enumerate(scores):
            writer.writerow([c, repr(float(score))])
    _print({"out": str(out / "occlusion.csv"), "ranking": [int(c) for c in np.argsort(-scores, kind="stable")]})


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic labelled dataset directory"),
    "pretrain": (cmd_pretrain, "masked temporal-frequency pretraining; writes a checkpoint and metrics CSV"),
    "reconstruct": (cmd_reconstruct, "dump original / perturbed / reconstructed NPY triplets"),
    "finetune": (cmd_finetune, "train a task head (probe) or the whole model (full)"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient checks per module"),
    "route-stats": (cmd_route_stats, "per-expert load and router bias CSV"),
    "occlude": (cmd_occlude, "per-channel occlusion importance CSV"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="brainof", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
        p.add_argument("--seed", type=int, default=None, help="root seed; overrides train.seed and finetune.seed")
        p.add_argument("--checkpoint", default=None, help="checkpoint directory to start from")
    return parser


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        return handler(args) or 0
    except BrainOFError as exc:
        return _fail(type(exc).__name__, str(exc), exc.exit_code)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), 3)


if __name__ == "__main__":
    sys.exit(main())
