"""Command line entry point: ``amrf <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .augment import AugmentationPool
from .classify import StubClassifier, StubClassifierConfig
from .core import atomic_write_text, default_jobs, dump_json, load_image, load_manifest, load_mask, load_sample, save_image, save_mask
from .errors import AMRFError, ConfigError, PipelineError
from .metrics import CLS_SCOPES, ScreeningThresholds, evaluate_dataset
from .segment import segmenter_from_json


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _seed(text: str) -> int:
    value = int(text, 10)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a decimal 64-bit unsigned integer")
    return value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    from .synth import SynthSpec, generate_synthetic

    obj = _read_json(args.spec) if args.spec else {}
    for key in ("count", "seed", "size", "split", "prefix"):
        value = getattr(args, key)
        if value is not None:
            obj[key] = value
    for key in ("angle_range", "zoom_range", "contrast_range", "blur_range"):
        value = getattr(args, key)
        if value is not None:
            obj[key] = value
    if "count" not in obj:
        raise ConfigError("--count (or a spec file with 'count') is required")
    try:
        spec = SynthSpec.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    manifest = generate_synthetic(spec, args.out, args.name)
    print(f"wrote {len(manifest)} samples to {args.out}")
    return 0


def _segmenter_args(args) -> dict:
    obj = {"adapter": args.adapter}
    if args.config:
        cfg = _read_json(args.config)
        if args.adapter == "baseline":
            # Accept either a bare SegmenterConfig or an adapter object.
            obj["config"] = cfg.get("config", cfg)
        else:
            obj.update({k: v for k, v in cfg.items() if k != "adapter"})
    return obj


def cmd_segment(args) -> int:
    manifest = load_manifest(args.inp)
    segmenter = segmenter_from_json(_segmenter_args(args), Path(args.config).parent if args.config else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for record in manifest:
        try:
            sample = load_sample(record)
            mask = segmenter.segment(sample)
        except AMRFError as exc:
            raise PipelineError(f"sample {record.id}: {exc}", sample_id=record.id) from exc
        save_mask(out / f"{record.id}.png", mask)
    print(f"wrote {len(manifest)} masks to {out}")
    return 0


def cmd_crop(args) -> int:
    from .moments import angle_adaptive_crop

    image = load_image(args.image)
    mask = load_mask(args.mask)
    result = angle_adaptive_crop(image, mask, args.margin)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    save_image(out / f"{stem}_crop.png", result.crop)
    save_mask(out / f"{stem}_crop_mask.png", result.crop_mask)
    atomic_write_text(out / f"{stem}_crop.json", dump_json(result.report()))
    print(f"alpha {result.alpha:.3f} deg, bbox {list(result.bbox)}")
    return 0


def _classifier(args) -> StubClassifier:
    if args.classifier != "stub":
        raise ConfigError(f"unknown classifier {args.classifier!r}")
    if args.classifier_config:
        return StubClassifier(StubClassifierConfig.from_json(_read_json(args.classifier_config)))
    return StubClassifier()


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.inp)
    segmenter = segmenter_from_json(_segmenter_args(args), Path(args.config).parent if args.config else None)
    classifier = _classifier(args)
    pool_version = 1
    if args.pool:
        pool_version = AugmentationPool.loads(Path(args.pool).read_text()).version
    thresholds = ScreeningThresholds.from_json(_read_json(args.thresholds)) if args.thresholds else ScreeningThresholds()
    report, outcomes = evaluate_dataset(
        segmenter, classifier, manifest, pool_version=pool_version, margin=args.margin,
        thresholds=thresholds, cls_scope=args.cls_scope, jobs=args.jobs,
    )
    errors = [o for o in outcomes if o.error]
    for o in errors:
        print(f"{o.id}: {o.error}", file=sys.stderr)
    atomic_write_text(args.out, dump_json(report.to_json()))
    print(report.table_row())
    return 0


def cmd_evolve(args) -> int:
    from .eap import RunConfig, run_amrf

    obj = _read_json(args.config)
    for key in ("seed", "max_iterations", "fraction", "epsilon"):
        value = getattr(args, key)
        if value is not None:
            obj[key] = value
    config = RunConfig.from_json(obj, base_dir=Path(args.config).resolve().parent)
    history = run_amrf(config, jobs=args.jobs, log=lambda msg: print(msg, file=sys.stderr))
    atomic_write_text(args.out, history.dumps())
    if args.summary:
        print(history.summary())
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _pair(kind):
    def parse(text):
        parts = text.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError("expected MIN,MAX")
        return [kind(p) for p in parts]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amrf", description="Augmentation-based model re-adaptation toolkit.")
    parser.add_argument("--version", action="version", version=f"amrf {__version__}")
    parser.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes (default: CPU count)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON file with SynthSpec fields; flags override it")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--size", type=int)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--prefix")
    p.add_argument("--name", help="manifest name (default: output directory name)")
    p.add_argument("--angle-range", type=_pair(float))
    p.add_argument("--zoom-range", type=_pair(float))
    p.add_argument("--contrast-range", type=_pair(float))
    p.add_argument("--blur-range", type=_pair(int))
    p.set_defaults(func=cmd_gen_synth)

    for name, func in (("segment", cmd_segment), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name, help=f"{name} every record of a manifest")
        p.add_argument("--adapter", choices=("baseline", "oracle"), default="baseline")
        p.add_argument("--config", help="adapter config JSON")
        p.add_argument("--in", dest="inp", required=True, help="dataset manifest")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    p.add_argument("--classifier", default="stub")
    p.add_argument("--classifier-config")
    p.add_argument("--pool", help="pool file; its version labels the report")
    p.add_argument("--margin", type=int, default=4)
    p.add_argument("--thresholds", help="screening thresholds JSON")
    p.add_argument("--cls-scope", choices=CLS_SCOPES, default="passing")

    p = sub.add_parser("crop", help="angle-adaptive crop of one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--margin", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("evolve", help="run the evolving augmentation pool loop")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="history JSON")
    p.add_argument("--summary", action="store_true", help="print fail/total per pool version")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_evolve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs < 1:
            raise UsageError("amrf: error: --jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"amrf: configuration error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        where = exc.sample_id if exc.sample_id is not None else (
            f"iteration {exc.iteration}" if exc.iteration is not None else None)
        print(f"amrf: pipeline error{f' at {where}' if where else ''}: {exc}", file=sys.stderr)
        return 2
    except (AMRFError, OSError, ValueError) as exc:
        print(f"amrf: pipeline error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
