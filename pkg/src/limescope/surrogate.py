"""Local surrogate fitting: perturb superpixels, query the black box, fit a
sparse weighted linear model whose coefficients attribute the prediction.

The interpretable family is sparse linear models; the loss is
proximity-weighted squared error; the complexity budget is a hard cap on the
number of selected superpixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParam, SingularSystem
from .image import Image, _wrap_checked
from .segmentation import Segmentation

__all__ = [
    "SurrogateConfig",
    "PerturbationBatch",
    "Explanation",
    "sample_masks",
    "apply_mask",
    "kernel_weight",
    "kernel_weights",
    "select_features",
    "fit_weighted_ridge",
    "explain_instance",
    "explanation_to_dict",
]

EXPLANATION_SCHEMA_VERSION = 1

BASELINES = ("mean", "gray")


@dataclass(frozen=True)
class SurrogateConfig:
    """Knobs for one explanation run.

    num_features is the complexity budget: at most that many superpixels
    enter the surrogate. baseline picks the fill for absent superpixels:
    per-segment mean color or fixed gray 0.5.
    """

    n_samples: int = 1000
    sigma: float = 0.25
    num_features: int = 5
    ridge_alpha: float = 1.0
    baseline: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.num_features < 1:
            raise InvalidParam(f"num_features must be >= 1, got {self.num_features}")
        if self.n_samples < self.num_features + 2:
            raise InvalidParam(
                f"n_samples must be >= num_features + 2, got {self.n_samples}"
            )
        if self.sigma <= 0:
            raise InvalidParam(f"sigma must be > 0, got {self.sigma}")
        if self.ridge_alpha < 0:
            raise InvalidParam(f"ridge_alpha must be >= 0, got {self.ridge_alpha}")
        if self.baseline not in BASELINES:
            raise InvalidParam(f"baseline must be one of {BASELINES}, got {self.baseline!r}")


@dataclass(frozen=True)
class PerturbationBatch:
    """Binary presence masks plus the black box's probabilities on them.

    Row 0 is the unperturbed instance (all superpixels present).
    """

    masks: np.ndarray  # (n, k) of {0, 1}
    probs: np.ndarray  # (n, C), each row sums to 1 within 1e-4

    def __post_init__(self):
        masks = np.ascontiguousarray(self.masks, dtype=np.int8)
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        n, k = masks.shape
        if probs.shape[0] != n:
            raise DimensionMismatch(f"{n} masks but {probs.shape[0]} probability rows")
        if n < k + 2:
            raise InvalidParam(f"need at least k+2={k + 2} rows to fit a surrogate, got {n}")
        if not np.all((masks == 0) | (masks == 1)):
            raise InvalidParam("mask entries must be 0 or 1")
        if not np.all(masks[0] == 1):
            raise InvalidParam("row 0 must be the all-ones instance mask")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-4):
            raise InvalidParam("probability rows must sum to 1 within 1e-4")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "probs", probs)
        masks.flags.writeable = False
        probs.flags.writeable = False


@dataclass(frozen=True)
class Explanation:
    """Per-superpixel signed attributions for one target class."""

    target_class: int
    selected_features: tuple[int, ...]
    weights: tuple[float, ...]
    intercept: float
    local_r2: float
    config: SurrogateConfig
    instance_prob: float
    flags: tuple[str, ...] = ()


def sample_masks(k: int, n_samples: int, seed: int) -> np.ndarray:
    """Draw the perturbation mask matrix.

    Row 0 is all ones; the remaining rows are i.i.d. Bernoulli(0.5) bits from
    a generator seeded with `seed`, so the matrix is reproducible.
    """
    if k < 1:
        raise InvalidParam(f"k must be >= 1, got {k}")
    if n_samples < 2:
        raise InvalidParam(f"n_samples must be >= 2, got {n_samples}")
    rng = np.random.default_rng(seed)
    masks = np.empty((n_samples, k), dtype=np.int8)
    masks[0] = 1
    masks[1:] = rng.integers(0, 2, size=(n_samples - 1, k), dtype=np.int8)
    return masks


def _fill_image(img: Image, seg: Segmentation, baseline: str) -> np.ndarray:
    if baseline == "gray":
        return np.full_like(img.pixels, 0.5)
    # Per-segment mean color, broadcast back over the label map.
    labels = seg.labels.ravel()
    px = img.pixels.reshape(-1, 3)
    sums = np.zeros((seg.num_segments, 3))
    for c in range(3):
        sums[:, c] = np.bincount(labels, weights=px[:, c], minlength=seg.num_segments)
    counts = np.bincount(labels, minlength=seg.num_segments).astype(np.float64)
    means = sums / counts[:, None]
    return means[seg.labels].reshape(img.pixels.shape)


def apply_mask(img: Image, seg: Segmentation, mask, baseline: str = "mean") -> Image:
    """Replace absent superpixels with the baseline fill."""
    mask = np.asarray(mask)
    if mask.shape != (seg.num_segments,):
        raise DimensionMismatch(
            f"mask length {mask.shape} does not match {seg.num_segments} segments"
        )
    if (img.height, img.width) != (seg.height, seg.width):
        raise DimensionMismatch(
            f"image {img.height}x{img.width} vs segmentation {seg.height}x{seg.width}"
        )
    present = mask.astype(bool)[seg.labels]
    fill = _fill_image(img, seg, baseline)
    return Image(np.where(present[:, :, None], img.pixels, fill))


def kernel_weights(masks: np.ndarray, sigma: float) -> np.ndarray:
    """Proximity weights exp(-D^2 / sigma^2) for each mask row.

    D is the cosine distance to the all-ones mask, which reduces to
    1 - sqrt(s / k) for a mask with s active bits. The all-zeros mask, whose
    cosine distance is undefined, is assigned D = 1 (the orthogonal limit).
    """
    if sigma <= 0:
        raise InvalidParam(f"sigma must be > 0, got {sigma}")
    masks = np.asarray(masks, dtype=np.float64)
    k = masks.shape[-1]
    s = masks.sum(axis=-1)
    dist = 1.0 - np.sqrt(s / k)
    dist = np.where(s == 0, 1.0, dist)
    return np.exp(-(dist**2) / (sigma**2))


def kernel_weight(mask, sigma: float) -> float:
    """Scalar convenience wrapper around kernel_weights."""
    return float(kernel_weights(np.asarray(mask)[None, :], sigma)[0])


def _weighted_lstsq_rss(X: np.ndarray, y: np.ndarray, sw: np.ndarray) -> float:
    # sw = sqrt(weights); design already includes the intercept column.
    sol, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ sol
    return float(np.sum((sw * resid) ** 2))


def select_features(
    masks: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    num_features: int,
) -> list[int]:
    """Forward stepwise selection on weighted least squares.

    At each step the feature with the largest weighted-RSS decrease is added;
    selection stops at num_features or when no candidate improves RSS by more
    than 1e-12. Ties break toward the lowest feature index. Constant targets
    (or all-constant columns) yield an empty selection.
    """
    X = np.asarray(masks, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n, k = X.shape
    if num_features < 1:
        raise InvalidParam(f"num_features must be >= 1, got {num_features}")
    if n < num_features + 2:
        raise InvalidParam(f"need n >= num_features + 2, got n={n}")
    sw = np.sqrt(w)
    ones = np.ones((n, 1))

    wsum = w.sum()
    ybar = float(w @ y) / wsum
    best_rss = float(w @ (y - ybar) ** 2)

    selected: list[int] = []
    while len(selected) < num_features:
        best_j, best_j_rss = -1, best_rss
        for j in range(k):
            if j in selected:
                continue
            design = np.concatenate([ones, X[:, selected + [j]]], axis=1)
            rss = _weighted_lstsq_rss(design, y, sw)
            if best_j_rss - rss > 1e-12:
                best_j, best_j_rss = j, rss
        if best_j == -1:
            break
        selected.append(best_j)
        best_rss = best_j_rss
    return selected


def fit_weighted_ridge(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    alpha: float,
) -> tuple[np.ndarray, float, float]:
    """Minimize sum_i w_i (y_i - beta.x_i - b)^2 + alpha * ||beta||^2.

    The intercept is unpenalized; the system is solved by normal equations on
    weighted, centered data. Returns (coefficients, intercept, local_r2) with
    local_r2 = 1 - weighted RSS / weighted TSS.

    Raises SingularSystem for a rank-deficient design at alpha = 0 rather
    than silently regularizing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n, m = X.shape
    if m < 1:
        raise InvalidParam("design must have at least one column")
    if n < m + 1:
        raise InvalidParam(f"need n >= m + 1 rows, got n={n}, m={m}")
    if alpha < 0:
        raise InvalidParam(f"alpha must be >= 0, got {alpha}")
    if np.any(w < 0) or int(np.count_nonzero(w > 0)) < m + 1:
        raise InvalidParam("weights must be >= 0 with at least m + 1 strictly positive")

    wsum = w.sum()
    xbar = (w @ X) / wsum
    ybar = float(w @ y) / wsum
    Xc = X - xbar
    yc = y - ybar
    A = Xc.T @ (w[:, None] * Xc) + alpha * np.eye(m)
    b = Xc.T @ (w * yc)
    if alpha == 0 and np.linalg.matrix_rank(A) < m:
        raise SingularSystem("rank-deficient design with alpha = 0")
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    intercept = ybar - float(xbar @ coef)
    resid = y - X @ coef - intercept
    rss = float(w @ resid**2)
    tss = float(w @ yc**2)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    return coef, intercept, r2


def explain_instance(
    img: Image,
    classifier,
    seg: Segmentation,
    target_class: int,
    cfg: SurrogateConfig,
    batch_size: int = 256,
) -> Explanation:
    """Fit the local surrogate for one image and target class.

    Composes mask sampling, masked-image construction, black-box queries,
    proximity weighting, feature selection, and the weighted ridge fit.
    Deterministic for fixed inputs and seed.
    """
    from .bridge import predict_batch

    if not 0 <= target_class < classifier.num_classes:
        raise InvalidParam(
            f"target_class {target_class} out of range for {classifier.num_classes} classes"
        )
    k = seg.num_segments
    masks = sample_masks(k, cfg.n_samples, cfg.seed)

    fill = _fill_image(img, seg, cfg.baseline)
    probs = np.empty((cfg.n_samples, classifier.num_classes))
    for start in range(0, cfg.n_samples, batch_size):
        chunk = masks[start : start + batch_size]
        present = chunk.astype(bool)[:, seg.labels]  # (b, H, W)
        stack = np.where(present[..., None], img.pixels, fill)
        images = [_wrap_checked(stack[i]) for i in range(len(chunk))]
        probs[start : start + len(images)] = predict_batch(classifier, images)

    batch = PerturbationBatch(masks, probs)
    y = batch.probs[:, target_class]
    instance_prob = float(y[0])

    if np.all(y == y[0]):
        return Explanation(
            target_class=target_class,
            selected_features=(),
            weights=(),
            intercept=instance_prob,
            local_r2=0.0,
            config=cfg,
            instance_prob=instance_prob,
            flags=("degenerate-classifier",),
        )

    w = kernel_weights(masks, cfg.sigma)
    selected = select_features(masks, y, w, cfg.num_features)
    if not selected:
        ybar = float(w @ y) / float(w.sum())
        return Explanation(
            target_class=target_class,
            selected_features=(),
            weights=(),
            intercept=ybar,
            local_r2=0.0,
            config=cfg,
            instance_prob=instance_prob,
        )
    coef, intercept, r2 = fit_weighted_ridge(
        masks[:, selected].astype(np.float64), y, w, cfg.ridge_alpha
    )
    return Explanation(
        target_class=target_class,
        selected_features=tuple(int(j) for j in selected),
        weights=tuple(float(c) for c in coef),
        intercept=intercept,
        local_r2=r2,
        config=cfg,
        instance_prob=instance_prob,
    )


def explanation_to_dict(expl: Explanation) -> dict:
    """JSON-ready form with stable field names."""
    return {
        "schema_version": EXPLANATION_SCHEMA_VERSION,
        "target_class": expl.target_class,
        "features": [
            {"segment": s, "weight": w}
            for s, w in zip(expl.selected_features, expl.weights)
        ],
        "intercept": expl.intercept,
        "local_r2": expl.local_r2,
        "config": {
            "n_samples": expl.config.n_samples,
            "sigma": expl.config.sigma,
            "num_features": expl.config.num_features,
            "ridge_alpha": expl.config.ridge_alpha,
            "baseline": expl.config.baseline,
            "seed": expl.config.seed,
        },
        "instance_prob": expl.instance_prob,
        "flags": list(expl.flags),
    }
