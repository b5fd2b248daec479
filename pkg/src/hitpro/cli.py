"""Command-line entry point: gen / train / mine / eval / gradcheck.

All subcommands are config-file driven (one flat JSON holding generator and
training keys) with flag overrides, write an ``effective_config.json``
echoing every resolved value, and are deterministic under a fixed seed.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .datamodel import Modality, PositiveKind, TrainConfig, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .evaluator import dataset_labels, distance_distribution, embed_tracklet, evaluate_dataset, mining_quality
from .gradcheck import run_gradcheck
from .mining import build_mining_report
from .synthgen import GenConfig, generate_dataset
from .trainer import train

_GEN_FIELDS = {f.name for f in dataclasses.fields(GenConfig)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage problems to exit code 1
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(raw) - (_GEN_FIELDS | _TRAIN_FIELDS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _resolve_configs(args) -> tuple[GenConfig, TrainConfig, dict]:
    """Merge config file values with CLI overrides into both config types."""
    values = _load_config_file(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag, key in (
        ("no_dts", "use_dts"), ("no_swa", "use_swa"), ("no_hls", "use_hls"),
        ("no_imcc", "use_imcc"), ("no_cm", "use_cm"),
    ):
        if getattr(args, flag, False):
            overrides[key] = False
    if getattr(args, "fixed_threshold", None) is not None:
        overrides["fixed_threshold"] = args.fixed_threshold
    if getattr(args, "tte_layers", None) is not None:
        overrides["n_tte_layers"] = args.tte_layers
    if getattr(args, "epochs", None) is not None:
        overrides["total_epochs"] = args.epochs
    if getattr(args, "iters", None) is not None:
        overrides["iters_per_epoch"] = args.iters
    values = {**values, **overrides}
    gen_cfg = GenConfig(**{k: v for k, v in values.items() if k in _GEN_FIELDS})
    train_cfg = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_FIELDS})
    return gen_cfg, train_cfg, values


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    env = os.environ.get("HITPRO_THREADS")
    if env is not None:
        return max(1, int(env))
    return os.cpu_count() or 1


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(_json_ready(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_effective_config(out_dir: Path, command: str, gen_cfg, train_cfg, args) -> None:
    payload = {
        "command": command,
        **dataclasses.asdict(gen_cfg),
        **dataclasses.asdict(train_cfg),
        "threads": _threads(args),
    }
    for key in ("data", "checkpoint", "out", "max_rank", "n_pairs", "epoch"):
        if getattr(args, key, None) is not None:
            payload[key] = str(getattr(args, key))
    _write_json(out_dir / "effective_config.json", payload)


def _cmd_gen(args) -> int:
    gen_cfg, train_cfg, _ = _resolve_configs(args)
    out = Path(args.out)
    dataset = generate_dataset(gen_cfg)
    save_dataset(dataset, out)
    _write_effective_config(out, "gen", gen_cfg, train_cfg, args)
    print(f"wrote {len(dataset.tracklets)} tracklets to {out}")
    return 0


def _cmd_train(args) -> int:
    gen_cfg, cfg, _ = _resolve_configs(args)
    dataset = load_dataset(args.data)
    cfg = cfg.with_overrides(d_in=dataset.d_in)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(dataset, cfg, threads=_threads(args))
    save_checkpoint(result.params, result.store, cfg.total_epochs, out / "checkpoint.hpt")
    _write_json(out / "metrics.json", {"epochs": result.epochs})
    _write_effective_config(out, "train", gen_cfg, cfg, args)
    if result.epochs:
        last = result.epochs[-1]
        print(
            f"trained {cfg.total_epochs} epochs; final mean loss "
            f"{last['mean_l_total']:.4f}"
        )
    else:
        print("trained 0 epochs; wrote initialized checkpoint")
    return 0


def _cmd_mine(args) -> int:
    gen_cfg, cfg, _ = _resolve_configs(args)
    params, store, saved_epoch = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    epoch = args.epoch if args.epoch is not None else min(saved_epoch, cfg.total_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = dataset_labels(dataset)
    payload = {"epoch": epoch}
    for modality in (Modality.VIS, Modality.IR):
        for kind in (PositiveKind.INTRA_MODAL, PositiveKind.CROSS_MODAL):
            report = build_mining_report(store, modality, kind, epoch, cfg)
            entry = report.to_json()
            if gt is not None:
                precision, recall = mining_quality(report, gt)
                entry["precision"] = precision
                entry["recall"] = recall
            payload[f"{modality.value.lower()}_{kind.value.lower()}"] = entry
    _write_json(out / "mining_report.json", payload)
    _write_effective_config(out, "mine", gen_cfg, cfg, args)
    print(f"wrote mining report for epoch {epoch} to {out / 'mining_report.json'}")
    return 0


def _cmd_eval(args) -> int:
    gen_cfg, cfg, _ = _resolve_configs(args)
    params, _store, _epoch = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    results = evaluate_dataset(params, dataset, cfg, max_rank=args.max_rank, threads=threads)

    embeddings = [
        {
            "tracklet_id": t.tracklet_id,
            "modality": t.modality.value,
            "camera_id": t.camera_id,
            "gt_identity": t.gt_identity,
            "vector": embed_tracklet(params, t, cfg),
        }
        for t in dataset.tracklets
    ]
    dist = distance_distribution(
        [(e["vector"], e["gt_identity"]) for e in embeddings],
        n_pairs=args.n_pairs,
        rng=np.random.default_rng(np.random.SeedSequence((cfg.seed, 3))),
    )
    payload = {
        "ir_to_vis": results["IR->VIS"].to_json(),
        "vis_to_ir": results["VIS->IR"].to_json(),
        "distance_distribution": dist,
        "embeddings": embeddings,
    }
    _write_json(out / "report.json", payload)
    _write_effective_config(out, "eval", gen_cfg, cfg, args)
    print(
        "IR->VIS rank1={:.4f} map={:.4f} | VIS->IR rank1={:.4f} map={:.4f}".format(
            results["IR->VIS"].cmc[0],
            results["IR->VIS"].mean_ap,
            results["VIS->IR"].cmc[0],
            results["VIS->IR"].mean_ap,
        )
    )
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed if args.seed is not None else 7)
    for depth, err in sorted(report["per_depth"].items()):
        print(f"tte_layers={depth}: max rel error {err:.3e}")
    print(f"max relative error: {report['max_rel_error']:.3e} "
          f"({report['elapsed_s']:.2f} s)")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "gradcheck_report.json", report)
        gen_cfg, train_cfg, _ = _resolve_configs(args)
        _write_effective_config(out, "gradcheck", gen_cfg, train_cfg, args)
    if report["max_rel_error"] >= 1e-4:
        raise RuntimeError(
            f"gradient check failed: max rel error {report['max_rel_error']:.3e}"
        )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="hitpro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=False, checkpoint=False, out_required=True):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--threads", type=int, help="worker threads (env HITPRO_THREADS)")
        if data:
            p.add_argument("--data", required=True, help="dataset dir or manifest.json")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint.hpt path")
        p.add_argument("--out", required=out_required, help="output directory")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    add_common(p_gen)
    p_gen.set_defaults(func=_cmd_gen)

    p_train = sub.add_parser("train", help="run the training schedule")
    add_common(p_train, data=True)
    p_train.add_argument("--epochs", type=int, help="override total epochs")
    p_train.add_argument("--iters", type=int, help="override iterations per epoch")
    p_train.add_argument("--no-dts", action="store_true", help="fixed threshold instead of dynamic")
    p_train.add_argument("--no-swa", action="store_true", help="uniform positive weights")
    p_train.add_argument("--no-hls", action="store_true", help="activate all losses from epoch 0")
    p_train.add_argument("--no-imcc", action="store_true", help="disable cross-camera loss")
    p_train.add_argument("--no-cm", action="store_true", help="disable cross-modality loss")
    p_train.add_argument("--fixed-threshold", type=float, help="threshold used with --no-dts")
    p_train.add_argument("--tte-layers", type=int, help="temporal transformer depth (0-2)")
    p_train.set_defaults(func=_cmd_train)

    p_mine = sub.add_parser("mine", help="dump a mining report for a checkpoint")
    add_common(p_mine, data=True, checkpoint=True)
    p_mine.add_argument("--epoch", type=int, help="epoch for the threshold schedule")
    p_mine.set_defaults(func=_cmd_mine)

    p_eval = sub.add_parser("eval", help="retrieval metrics and embedding report")
    add_common(p_eval, data=True, checkpoint=True)
    p_eval.add_argument("--max-rank", type=int, default=20)
    p_eval.add_argument("--n-pairs", type=int, default=40_000,
                        help="sampled pairs per class for the distance histogram")
    p_eval.set_defaults(func=_cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    add_common(p_grad, out_required=False)
    p_grad.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
