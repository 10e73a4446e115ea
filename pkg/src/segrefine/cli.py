"""Command-line front end: synth, bank build/inspect, run, eval, config.

One JSON config file drives everything; ``--set key=value`` flags override
individual fields and dedicated flags (--out, --jobs, ...) override those.
Exit codes: 0 success, 1 typed one-line error, 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline, retrieval, store, synth
from .store import StoreError, ValidationError


def _parse_set(pairs: list[str]) -> dict:
    """``key=value`` strings to a dict; values are JSON, falling back to str."""
    out = {}
    bad = []
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            bad.append(pair)
            continue
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    if bad:
        raise ValidationError(
            "bad --set syntax (want key=value): " + ", ".join(repr(p) for p in bad)
        )
    return out


def _build_config(cls, config_path: str | None, sets: list[str]):
    """defaults < config file < --set, with unknown keys rejected in bulk."""
    values = dataclasses.asdict(cls())
    layers = []
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError(f"config {config_path} must hold a JSON object")
        layers.append(loaded)
    layers.append(_parse_set(sets))
    unknown = sorted({k for layer in layers for k in layer} - set(values))
    if unknown:
        raise ValidationError(
            f"unknown config keys for {cls.__name__}: " + ", ".join(unknown)
        )
    for layer in layers:
        values.update(layer)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}") from exc


def cmd_synth(args) -> int:
    cfg = _build_config(synth.SynthConfig, args.config, args.set)
    cfg.validate()
    out = args.out or "data"
    manifest = synth.generate_dataset(cfg, out)
    print(
        f"wrote {len(manifest.scenes)} scenes to {out} "
        f"(bank {len(manifest.bank_split)}, eval {len(manifest.eval_split)})"
    )
    return 0


def cmd_bank_build(args) -> int:
    cfg = _build_config(pipeline.PipelineConfig, args.config, args.set)
    if args.out:
        cfg.bank_dir = args.out
    cfg.validate()
    manifest = store.read_manifest(cfg.manifest)
    bundles = [store.load_bundle(manifest, sid) for sid in manifest.bank_split]
    if not bundles:
        raise ValidationError(f"{cfg.manifest}: bank split is empty")
    bank = retrieval.build_bank(
        bundles,
        manifest.patch_size,
        manifest.class_count,
        uncertainty_kind=cfg.uncertainty_kind,
        keep_fraction=cfg.keep_fraction,
        q=cfg.percentile,
        min_area=cfg.min_area,
    )
    retrieval.save_bank(bank, cfg.bank_dir)
    print(
        f"bank {cfg.bank_dir}: {len(bank.globals_)} scenes, "
        f"{len(bank.entries)} entries"
    )
    return 0


def cmd_bank_inspect(args) -> int:
    bank = retrieval.load_bank(args.bank)
    per_scene: dict[str, int] = {sid: 0 for sid in bank.scene_ids()}
    for entry in bank.entries:
        per_scene[entry.scene_id] += 1
    print(f"scenes: {len(bank.globals_)}")
    print(f"entries: {len(bank.entries)}")
    print(f"embed_dim: {bank.embed_dim}")
    print(f"class_count: {bank.class_count}")
    if bank.entries:
        norms = [float(np.linalg.norm(e.feature.vector)) for e in bank.entries]
        print(f"feature norms: min {min(norms):.6f} max {max(norms):.6f}")
        uncs = [e.source_uncertainty for e in bank.entries]
        print(f"entry uncertainty: min {min(uncs):.6f} max {max(uncs):.6f}")
    for sid, count in per_scene.items():
        print(f"  {sid}: {count} entries")
    return 0


def cmd_run(args) -> int:
    cfg = _build_config(pipeline.PipelineConfig, args.config, args.set)
    if args.out:
        cfg.out_dir = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    cfg.validate()
    manifest = store.read_manifest(cfg.manifest)
    bank = retrieval.load_bank(cfg.bank_dir)
    result = pipeline.run(manifest, bank, cfg, cfg.out_dir)
    gated = sum(1 for r in result.records if r.gated)
    print(
        f"run {cfg.out_dir}: {len(result.records)} regions, {gated} gated, "
        f"{len(result.fused_paths)} fused scenes"
    )
    return 0


def cmd_eval(args) -> int:
    run_dir = args.run_dir
    out = args.out or run_dir
    report = pipeline.evaluate_run(run_dir, out)
    gated_delta = (
        "n/a" if report.gated_mean_delta_iou is None
        else f"{report.gated_mean_delta_iou:+.4f}"
    )
    print(
        f"eval {out}: {report.region_count} regions, {report.gated_count} gated, "
        f"mean dIoU {report.mean_delta_iou:+.4f}, gated dIoU {gated_delta}, "
        f"cost {report.intervention_cost:.4f}"
    )
    return 0


def cmd_config(args) -> int:
    cls = synth.SynthConfig if args.which == "synth" else pipeline.PipelineConfig
    cfg = _build_config(cls, args.config, args.set)
    cfg.validate()
    print(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument(
        "--set",
        metavar="K=V",
        action="append",
        default=[],
        help="override one config field (repeatable; value parsed as JSON)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segrefine",
        description="retrieval-gated refinement of ensemble segmentations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset + manifest")
    _add_common(p_synth)
    p_synth.add_argument("--out", metavar="DIR", help="dataset directory (default data)")
    p_synth.set_defaults(func=cmd_synth)

    p_bank = sub.add_parser("bank", help="memory bank operations")
    bank_sub = p_bank.add_subparsers(dest="bank_command", required=True)
    p_build = bank_sub.add_parser("build", help="build a bank from the bank split")
    _add_common(p_build)
    p_build.add_argument("--out", metavar="DIR", help="bank directory override")
    p_build.set_defaults(func=cmd_bank_build)
    p_inspect = bank_sub.add_parser("inspect", help="summarize a saved bank")
    p_inspect.add_argument("bank", help="bank directory")
    p_inspect.set_defaults(func=cmd_bank_inspect)

    p_run = sub.add_parser("run", help="gate and fuse the evaluation split")
    _add_common(p_run)
    p_run.add_argument("--out", metavar="DIR", help="run output directory override")
    p_run.add_argument("--jobs", type=int, metavar="N", help="scene-level worker bound")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="score a finished run directory")
    p_eval.add_argument("run_dir", help="directory holding records.json")
    p_eval.add_argument("--out", metavar="DIR", help="report directory (default run_dir)")
    p_eval.set_defaults(func=cmd_eval)

    p_config = sub.add_parser("config", help="print the effective config as JSON")
    _add_common(p_config)
    p_config.add_argument(
        "--which",
        choices=("pipeline", "synth"),
        default="pipeline",
        help="which config family to resolve",
    )
    p_config.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StoreError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
