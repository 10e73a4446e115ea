"""Command line front end."""

import argparse
import dataclasses
import json
import sys

from .config import ExportConfig, ExportError
from .export import export_dataset
from .selftest import run_selftest


def _build_config(args) -> ExportConfig:
    values = dataclasses.asdict(ExportConfig())
    if args.config:
        try:
            loaded = json.loads(open(args.config, encoding="utf-8").read())
        except json.JSONDecodeError as exc:
            raise ExportError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ExportError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(loaded) - set(values))
        if unknown:
            raise ExportError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for pair in args.set or []:
        key, sep, raw = pair.partition("=")
        if not sep or key not in values:
            raise ExportError(f"bad --set {pair!r} (known keys: {', '.join(sorted(values))})")
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError:
            values[key] = raw
    if getattr(args, "images", None):
        values["images"] = args.images
    if getattr(args, "labels", None):
        values["labels"] = args.labels
    if getattr(args, "out", None):
        values["out"] = args.out
        values["out_dir"] = values.pop("out")
    if isinstance(values.get("scales"), list):
        values["scales"] = tuple(values["scales"])
    try:
        return ExportConfig(**values)
    except TypeError as exc:
        raise ExportError(f"bad config: {exc}") from exc


def cmd_export(args) -> int:
    cfg = _build_config(args)
    export_dataset(cfg, log=print)
    return 0


def cmd_selftest(args) -> int:
    failures = run_selftest(tol=args.tol, log=print)
    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_config(args) -> int:
    cfg = _build_config(args)
    print(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True, default=list))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segexport",
        description="export aligned TTA ensembles, features, and labels as scene bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_export = sub.add_parser("export", help="export a dataset from images + labels")
    p_export.add_argument("--config", metavar="PATH", help="JSON config file")
    p_export.add_argument("--set", metavar="K=V", action="append", default=[])
    p_export.add_argument("--images", nargs="+", metavar="IMG", help="input images in order")
    p_export.add_argument("--labels", nargs="+", metavar="LAB", help="label maps, aligned")
    p_export.add_argument("--out", metavar="DIR", help="output directory override")
    p_export.set_defaults(func=cmd_export)

    p_self = sub.add_parser("selftest", help="run the hermetic realignment checks")
    p_self.add_argument("--tol", type=float, default=1e-5, help="agreement tolerance")
    p_self.set_defaults(func=cmd_selftest)

    p_cfg = sub.add_parser("config", help="print the effective config as JSON")
    p_cfg.add_argument("--config", metavar="PATH", help="JSON config file")
    p_cfg.add_argument("--set", metavar="K=V", action="append", default=[])
    p_cfg.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
