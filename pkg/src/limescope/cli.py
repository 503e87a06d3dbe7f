"""Command-line surface: split, evaluate, explain, stability.

Exit codes: 0 success, 1 usage, 2 I/O or configuration, 3 data, 4 bridge.
A TOML config file (path from $LIMESCOPE_CONFIG) supplies defaults; explicit
flags always win. All randomness in a command flows from its --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import (
    BridgeError,
    ClassCountMismatch,
    DecodeError,
    EmptyClass,
    EmptyMatrix,
    InvalidDimension,
    InvalidParam,
    IoError,
    LabelOutOfRange,
    MalformedCsv,
    NoValidClass,
    NormalizationError,
    UnknownClass,
)

CONFIG_ENV = "LIMESCOPE_CONFIG"

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_BRIDGE = 4

_IO_ERRORS = (IoError, DecodeError, FileNotFoundError, NotADirectoryError, PermissionError)
_DATA_ERRORS = (
    MalformedCsv,
    UnknownClass,
    EmptyClass,
    LabelOutOfRange,
    EmptyMatrix,
    NoValidClass,
    ClassCountMismatch,
    InvalidParam,
    InvalidDimension,
)
_BRIDGE_ERRORS = (BridgeError, NormalizationError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config() -> dict:
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise IoError(f"invalid TOML in {path}: {exc}") from exc


def _resolve_model(spec: str, config: dict):
    """--model accepts 'file.toml', 'file.toml:section', or a bare section
    name looked up in the $LIMESCOPE_CONFIG file."""
    from .bridge import load_classifier_config, open_classifier

    if ":" in spec:
        file_part, section = spec.rsplit(":", 1)
        return open_classifier(load_classifier_config(file_part, section))
    if spec.endswith(".toml") or Path(spec).exists():
        return open_classifier(load_classifier_config(spec))
    models = config.get("models", {})
    if spec in models:
        return open_classifier(models[spec])
    raise IoError(f"model {spec!r}: no such file and no [models.{spec}] in config")


def _parse_ratios(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated ratios")
    try:
        ratios = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError(f"ratios must be non-negative and sum to 1, got {text}")
    return ratios


def cmd_split(args, config) -> int:
    from .dataset import SplitSpec, class_histogram, ingest_gtsrb, stratified_split, write_split_manifest

    spec = SplitSpec(ratios=args.ratios, seed=args.seed)
    ds = ingest_gtsrb(args.root)
    train, val, test = stratified_split(ds, spec)
    write_split_manifest(args.out, {"train": train, "val": val, "test": test})
    hist = class_histogram(ds)
    print(f"ingested {len(ds)} items across {ds.num_classes} classes")
    for c, n in enumerate(hist):
        print(f"  class {c}: {n}")
    print(f"split sizes: train={len(train)} val={len(val)} test={len(test)}")
    print(f"manifest written to {args.out}")
    return 0


def cmd_evaluate(args, config) -> int:
    from .dataset import read_split_manifest
    from .metrics import evaluate_model, render_report_table

    splits = read_split_manifest(args.manifest)
    if args.split not in splits or not len(splits[args.split]):
        raise InvalidParam(f"manifest has no items for split {args.split!r}")
    dataset = splits[args.split]
    resolution = tuple(config.get("explain", {}).get("resolution", (62, 62)))
    classifier = _resolve_model(args.model, config)
    try:
        report = evaluate_model(classifier, dataset, resolution=resolution)
    finally:
        classifier.close()
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(render_report_table(report))
    for flag in report["flags"]:
        print(f"flag: {flag}")
    return 0


def _surrogate_config(args):
    from .surrogate import SurrogateConfig

    return SurrogateConfig(
        n_samples=args.samples,
        sigma=args.sigma,
        num_features=args.k,
        ridge_alpha=args.alpha,
        baseline=args.baseline,
        seed=args.seed,
    )


def _target_spec(args, parser) -> str:
    if args.target_class in ("predicted", "true"):
        if args.target_class == "true" and args.label is None:
            parser.error("--class true requires --label")
        return args.target_class
    try:
        int(args.target_class)
    except ValueError:
        parser.error(f"--class must be predicted, true, or a class index, got {args.target_class!r}")
    return args.target_class


def cmd_explain(args, config, parser) -> int:
    from .pipeline import explain_batch

    target = _target_spec(args, parser)
    resolution = tuple(config.get("explain", {}).get("resolution", (62, 62)))
    classifier = _resolve_model(args.model, config)
    try:
        if target not in ("predicted", "true") and not 0 <= int(target) < classifier.num_classes:
            parser.error(f"--class {target} out of range for {classifier.num_classes} classes")
        manifest = explain_batch(
            [(args.image, args.label)],
            classifier,
            _surrogate_config(args),
            args.out,
            seg_params={
                "target_segments": args.segments,
                "compactness": args.compactness,
                "max_iter": args.max_iter,
            },
            resolution=resolution,
            target=target,
            top_k=args.top_k,
            jobs=args.jobs,
        )
    finally:
        classifier.close()
    if manifest["errors"]:
        for err in manifest["errors"]:
            print(f"error: {err['path']}: {err['error']}", file=sys.stderr)
        return EXIT_DATA
    result = manifest["results"][0]
    print(f"predicted class: {result['predicted_class']}")
    print(f"target class:    {result['target_class']}")
    print(f"local r2:        {result['local_r2']:.4f}")
    print(f"outputs under:   {Path(args.out) / result['hash']}")
    return 0


def cmd_stability(args, config, parser) -> int:
    from .image import load_image, resize
    from .pipeline import stability_run
    from .segmentation import slic_segment
    import numpy as np

    if args.runs < 2:
        parser.error("--runs must be >= 2")
    target = _target_spec(args, parser)
    resolution = tuple(config.get("explain", {}).get("resolution", (62, 62)))
    classifier = _resolve_model(args.model, config)
    try:
        if target not in ("predicted", "true") and not 0 <= int(target) < classifier.num_classes:
            parser.error(f"--class {target} out of range for {classifier.num_classes} classes")
        img = resize(load_image(args.image), *resolution)
        seg = slic_segment(
            img, target_segments=args.segments, compactness=args.compactness,
            max_iter=args.max_iter, seed=args.seed,
        )
        from .bridge import predict_batch

        probs = predict_batch(classifier, [img])[0]
        if target == "predicted":
            target_class = int(np.argmax(probs))
        elif target == "true":
            target_class = int(args.label)
        else:
            target_class = int(target)
        report = stability_run(
            img, classifier, seg, target_class, _surrogate_config(args), args.runs, args.top_k
        )
    finally:
        classifier.close()
    payload = {
        "schema_version": 1,
        "n_runs": report.n_runs,
        "top_k": report.top_k,
        "target_class": target_class,
        "pairwise_jaccard": list(report.pairwise_jaccard),
        "mean_jaccard": report.mean_jaccard,
        "runs": [list(r) for r in report.runs],
        "flags": list(report.flags),
    }
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _add_surrogate_flags(p: argparse.ArgumentParser, defaults: dict) -> None:
    p.add_argument("--segments", type=int, default=defaults.get("segments", 50),
                   help="target superpixel count (default: %(default)s)")
    p.add_argument("--samples", type=int, default=defaults.get("samples", 1000),
                   help="perturbation samples (default: %(default)s)")
    p.add_argument("--k", type=int, default=defaults.get("k", 5),
                   help="max surrogate features (default: %(default)s)")
    p.add_argument("--sigma", type=float, default=defaults.get("sigma", 0.25),
                   help="proximity kernel width (default: %(default)s)")
    p.add_argument("--alpha", type=float, default=defaults.get("alpha", 1.0),
                   help="ridge regularization (default: %(default)s)")
    p.add_argument("--baseline", choices=("mean", "gray"), default=defaults.get("baseline", "mean"),
                   help="fill for masked superpixels (default: %(default)s)")
    p.add_argument("--compactness", type=float, default=defaults.get("compactness", 10.0),
                   help="SLIC compactness (default: %(default)s)")
    p.add_argument("--max-iter", type=int, default=defaults.get("max_iter", 10),
                   help="SLIC iterations (default: %(default)s)")
    p.add_argument("--top-k", type=int, default=defaults.get("top_k", 5),
                   help="features shown/compared (default: %(default)s)")
    p.add_argument("--class", dest="target_class", default=defaults.get("target_class", "predicted"),
                   help="predicted, true, or a class index (default: %(default)s)")
    p.add_argument("--label", type=int, default=None,
                   help="true class index, required with --class true")


def build_parser(config: dict | None = None) -> argparse.ArgumentParser:
    config = config or {}
    explain_cfg = config.get("explain", {})
    parser = _Parser(prog="limescope", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_split = sub.add_parser("split", help="ingest a dataset tree and write a stratified split manifest")
    p_split.add_argument("--root", required=True, help="dataset root directory")
    p_split.add_argument("--ratios", type=_parse_ratios, default=(0.7, 0.1, 0.2),
                         help="train,val,test ratios (default: 0.7,0.1,0.2)")
    p_split.add_argument("--seed", type=int, default=0, help="shuffle seed (default: %(default)s)")
    p_split.add_argument("--out", required=True, help="manifest CSV path")

    p_eval = sub.add_parser("evaluate", help="score a classifier on one split and report all metrics")
    p_eval.add_argument("--manifest", required=True, help="split manifest CSV")
    p_eval.add_argument("--split", default="test", choices=("train", "val", "test"),
                        help="split to evaluate (default: %(default)s)")
    p_eval.add_argument("--model", required=True, help="model config: file.toml[:section] or config section name")
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity (default: %(default)s)")

    p_explain = sub.add_parser("explain", help="explain one image and render the attribution overlay")
    p_explain.add_argument("--image", required=True, help="input PNG or PPM")
    p_explain.add_argument("--model", required=True, help="model config: file.toml[:section] or section name")
    p_explain.add_argument("--out", required=True, help="output directory")
    p_explain.add_argument("--seed", type=int, default=0, help="sampling seed (default: %(default)s)")
    p_explain.add_argument("--jobs", type=int, default=1, help="worker threads (default: %(default)s)")
    _add_surrogate_flags(p_explain, explain_cfg)

    p_stab = sub.add_parser("stability", help="re-run the explainer and report top-k Jaccard agreement")
    p_stab.add_argument("--image", required=True, help="input PNG or PPM")
    p_stab.add_argument("--model", required=True, help="model config: file.toml[:section] or section name")
    p_stab.add_argument("--runs", type=int, default=10, help="number of re-runs (default: %(default)s)")
    p_stab.add_argument("--seed", type=int, default=0, help="base seed (default: %(default)s)")
    p_stab.add_argument("--out", default=None, help="report JSON path")
    _add_surrogate_flags(p_stab, explain_cfg)

    return parser


def main(argv=None) -> int:
    try:
        config = _load_config()
    except IoError as exc:
        print(f"limescope: {exc}", file=sys.stderr)
        return EXIT_IO
    parser = build_parser(config)
    args = parser.parse_args(argv)
    try:
        if args.command == "split":
            return cmd_split(args, config)
        if args.command == "evaluate":
            return cmd_evaluate(args, config)
        if args.command == "explain":
            return cmd_explain(args, config, parser)
        if args.command == "stability":
            return cmd_stability(args, config, parser)
        parser.error(f"unknown command {args.command!r}")
    except _BRIDGE_ERRORS as exc:
        print(f"limescope: bridge failure: {exc}", file=sys.stderr)
        return EXIT_BRIDGE
    except _IO_ERRORS as exc:
        print(f"limescope: {exc}", file=sys.stderr)
        return EXIT_IO
    except _DATA_ERRORS as exc:
        print(f"limescope: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
