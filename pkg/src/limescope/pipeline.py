"""Orchestration: explanation batches, re-run stability analysis, and the
green/red attribution overlay rendering.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import InvalidParam, LimescopeError, SegmentationMismatch
from .image import Image, load_image, resize, save_png
from .segmentation import Segmentation, slic_segment, save_segmentation
from .surrogate import Explanation, SurrogateConfig, explain_instance, explanation_to_dict

__all__ = [
    "StabilityReport",
    "top_features",
    "jaccard",
    "stability_run",
    "render_overlay",
    "explain_batch",
]

MANIFEST_SCHEMA_VERSION = 1

GREEN = np.array([0.0, 1.0, 0.0])
RED = np.array([1.0, 0.0, 0.0])
YELLOW = np.array([1.0, 1.0, 0.0])
TINT = 0.5  # blend fraction toward the attribution color


@dataclass(frozen=True)
class StabilityReport:
    """Agreement of top-k selected features across seeded re-runs."""

    n_runs: int
    top_k: int
    pairwise_jaccard: tuple[float, ...]
    mean_jaccard: float
    runs: tuple[tuple[int, ...], ...]
    flags: tuple[str, ...] = ()


def top_features(expl: Explanation, top_k: int) -> tuple[int, ...]:
    """Up to top_k selected segments ordered by |weight| descending."""
    ranked = sorted(
        zip(expl.selected_features, expl.weights), key=lambda fw: (-abs(fw[1]), fw[0])
    )
    return tuple(f for f, _ in ranked[:top_k])


def jaccard(a, b) -> float:
    """|a & b| / |a | b|, with empty/empty defined as 1."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def stability_run(
    img: Image,
    classifier,
    seg: Segmentation,
    target_class: int,
    cfg: SurrogateConfig,
    n_runs: int,
    top_k: int,
) -> StabilityReport:
    """Re-run the explainer with seeds cfg.seed + 0..n_runs-1 and compare
    the top-k feature sets of every pair."""
    if n_runs < 2:
        raise InvalidParam(f"n_runs must be >= 2, got {n_runs}")
    if top_k < 1:
        raise InvalidParam(f"top_k must be >= 1, got {top_k}")
    runs = []
    flags: set[str] = set()
    for i in range(n_runs):
        expl = explain_instance(img, classifier, seg, target_class, replace(cfg, seed=cfg.seed + i))
        runs.append(top_features(expl, top_k))
        flags.update(expl.flags)
    pairwise = tuple(jaccard(a, b) for a, b in combinations(runs, 2))
    return StabilityReport(
        n_runs=n_runs,
        top_k=top_k,
        pairwise_jaccard=pairwise,
        mean_jaccard=float(np.mean(pairwise)),
        runs=tuple(runs),
        flags=tuple(sorted(flags)),
    )


def _boundary_mask(labels: np.ndarray) -> np.ndarray:
    # 1-pixel outline: a pixel whose right or lower 4-neighbor carries a
    # different label.
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edge[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return edge


def render_overlay(img: Image, seg: Segmentation, expl: Explanation, top_k: int = 5) -> Image:
    """Tint the top-k attributed superpixels green (positive) or red
    (negative) at 50% and draw yellow segment outlines; every other pixel is
    left untouched."""
    if (img.height, img.width) != (seg.height, seg.width):
        raise SegmentationMismatch(
            f"image {img.height}x{img.width} vs segmentation {seg.height}x{seg.width}"
        )
    if any(f >= seg.num_segments or f < 0 for f in expl.selected_features):
        raise SegmentationMismatch("explanation features outside this segmentation's labels")
    out = img.pixels.copy()
    shown = set(top_features(expl, top_k))
    weight = dict(zip(expl.selected_features, expl.weights))
    for f in sorted(shown):
        color = GREEN if weight[f] > 0 else RED
        region = seg.labels == f
        out[region] = (1.0 - TINT) * out[region] + TINT * color
    edge = _boundary_mask(seg.labels)
    out[edge] = YELLOW
    return Image(out)


def _item_hash(path: str, cfg_dict: dict) -> str:
    payload = json.dumps({"path": str(path), "config": cfg_dict}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _config_dict(cfg: SurrogateConfig, seg_params: dict, resolution, target_spec) -> dict:
    return {
        "n_samples": cfg.n_samples,
        "sigma": cfg.sigma,
        "num_features": cfg.num_features,
        "ridge_alpha": cfg.ridge_alpha,
        "baseline": cfg.baseline,
        "seed": cfg.seed,
        "segmentation": seg_params,
        "resolution": list(resolution),
        "target": str(target_spec),
    }


def explain_batch(
    items,
    classifier,
    cfg: SurrogateConfig,
    out_dir,
    seg_params: dict | None = None,
    resolution: tuple[int, int] = (62, 62),
    target: str = "predicted",
    top_k: int = 5,
    jobs: int = 1,
) -> dict:
    """Explain every (path, true_class) item, writing per-item artifacts and
    a manifest.

    Per item: <out>/<hash>/{segmentation.png, segmentation.json,
    explanation.json, overlay.png} where <hash> digests the image path plus
    the full configuration. Failures do not abort the batch; they are
    collected as manifest error entries. target is "predicted", "true", or a
    class index.
    """
    items = list(items)
    if not items:
        raise InvalidParam("explain_batch needs a non-empty subset")
    seg_params = dict(seg_params or {})
    seg_params.setdefault("target_segments", 50)
    seg_params.setdefault("compactness", 10.0)
    seg_params.setdefault("max_iter", 10)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = _config_dict(cfg, seg_params, resolution, target)

    def one(item):
        path, true_class = item
        img = resize(load_image(path), *resolution)
        seg = slic_segment(img, seed=cfg.seed, **seg_params)
        from .bridge import predict_batch

        probs = predict_batch(classifier, [img])[0]
        predicted = int(np.argmax(probs))
        if target == "predicted":
            target_class = predicted
        elif target == "true":
            if true_class is None:
                raise InvalidParam(f"{path}: target 'true' needs a labeled item")
            target_class = int(true_class)
        else:
            target_class = int(target)
        expl = explain_instance(img, classifier, seg, target_class, cfg)
        overlay = render_overlay(img, seg, expl, top_k)

        h = _item_hash(path, cfg_dict)
        item_dir = out_dir / h
        item_dir.mkdir(parents=True, exist_ok=True)
        save_segmentation(
            seg, item_dir / "segmentation.png", item_dir / "segmentation.json",
            seg_params, cfg.seed,
        )
        (item_dir / "explanation.json").write_text(
            json.dumps(explanation_to_dict(expl), sort_keys=True, indent=2) + "\n"
        )
        save_png(overlay, item_dir / "overlay.png")
        return {
            "path": str(path),
            "hash": h,
            "true_class": None if true_class is None else int(true_class),
            "predicted_class": predicted,
            "correct": None if true_class is None else bool(predicted == int(true_class)),
            "target_class": target_class,
            "local_r2": expl.local_r2,
            "flags": list(expl.flags),
            # Relative to the output root, so re-runs are byte-identical
            # wherever the directory lives.
            "outputs": {
                "segmentation_png": f"{h}/segmentation.png",
                "segmentation_json": f"{h}/segmentation.json",
                "explanation_json": f"{h}/explanation.json",
                "overlay_png": f"{h}/overlay.png",
            },
        }

    results = []
    errors = []

    def guarded(item):
        try:
            return ("ok", one(item))
        except (LimescopeError, OSError) as exc:
            return ("err", {"path": str(item[0]), "error": f"{type(exc).__name__}: {exc}"})

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(guarded, items))
    else:
        outcomes = [guarded(item) for item in items]
    for kind, payload in outcomes:
        (results if kind == "ok" else errors).append(payload)
    results.sort(key=lambda r: r["path"])
    errors.sort(key=lambda e: e["path"])

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "model_name": classifier.name,
        "config": cfg_dict,
        "results": results,
        "errors": errors,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return manifest
