from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from limescope.bridge import make_constant_classifier, make_planted_oracle
from limescope.errors import DimensionMismatch, InvalidParam, SingularSystem
from limescope.image import from_array
from limescope.segmentation import Segmentation, slic_segment
from limescope.surrogate import (
    PerturbationBatch,
    SurrogateConfig,
    apply_mask,
    explain_instance,
    explanation_to_dict,
    fit_weighted_ridge,
    kernel_weight,
    kernel_weights,
    sample_masks,
    select_features,
)


def oracle_wls_rss(columns: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """Independent weighted-least-squares RSS via explicit normal equations
    on the intercept-augmented design."""
    X = np.concatenate([np.ones((len(y), 1)), columns], axis=1)
    A = X.T @ (w[:, None] * X)
    b = X.T @ (w * y)
    beta = np.linalg.lstsq(A, b, rcond=None)[0]
    r = y - X @ beta
    return float(w @ r**2)


def halved_image(size: int = 16):
    """Left-black / right-white image with the matching 2-segment map."""
    px = np.zeros((size, size, 3))
    px[:, size // 2 :] = 1.0
    labels = np.zeros((size, size), dtype=np.int32)
    labels[:, size // 2 :] = 1
    return from_array(px), Segmentation(labels, 2)


def noise_image_avoiding_gray(rng, h, w):
    """Random image whose every channel stays > 0.05 away from the 0.5 fill,
    so gray-baseline masking alters every pixel detectably."""
    v = rng.random((h, w, 3)) * 0.8
    v = np.where(v < 0.4, v, v + 0.2)
    return from_array(v)


class TestSampleMasks:
    def test_row_zero_all_ones(self):
        masks = sample_masks(3, 5, seed=0)
        assert np.all(masks[0] == 1)
        assert masks.shape == (5, 3)

    def test_bernoulli_mean_concentrates(self):
        masks = sample_masks(1, 1000, seed=42)
        mean = masks[1:].mean()
        assert 0.40 <= mean <= 0.60  # binomial bound, p < 1e-9 outside

    def test_deterministic_per_seed(self):
        a = sample_masks(7, 64, seed=9)
        b = sample_masks(7, 64, seed=9)
        c = sample_masks(7, 64, seed=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_validation(self):
        with pytest.raises(InvalidParam):
            sample_masks(0, 10, 0)
        with pytest.raises(InvalidParam):
            sample_masks(3, 1, 0)


class TestApplyMask:
    def test_all_ones_is_identity(self, rng):
        img, seg = halved_image()
        out = apply_mask(img, seg, np.array([1, 1]), "mean")
        assert np.array_equal(out.pixels, img.pixels)

    def test_all_zeros_gray_fill(self):
        img, seg = halved_image()
        out = apply_mask(img, seg, np.array([0, 0]), "gray")
        assert np.all(out.pixels == 0.5)

    def test_mean_fill_uses_per_segment_mean(self):
        # Masking the white half with its own mean leaves it white; the
        # black half is untouched by mask=(1,0).
        img, seg = halved_image()
        out = apply_mask(img, seg, np.array([1, 0]), "mean")
        assert np.array_equal(out.pixels, img.pixels)
        # A mixed segment really moves to its mean.
        px = np.zeros((2, 2, 3))
        px[0, 1] = 1.0  # segment 0 = whole image, mean 0.25
        seg1 = Segmentation(np.zeros((2, 2), dtype=np.int32), 1)
        masked = apply_mask(from_array(px), seg1, np.array([0]), "mean")
        assert np.allclose(masked.pixels, 0.25)

    def test_dimension_mismatch(self):
        img, seg = halved_image()
        with pytest.raises(DimensionMismatch):
            apply_mask(img, seg, np.array([1, 0, 1]), "mean")


class TestKernelWeight:
    def test_instance_mask_weight_one(self):
        assert kernel_weight(np.ones(6), 0.25) == 1.0

    def test_hand_computed_value(self):
        # k=4, two bits on: D = 1 - 2/(sqrt(2)*sqrt(4)); w = exp(-D^2/sigma^2)
        w = kernel_weight(np.array([1, 1, 0, 0]), 0.25)
        assert w == pytest.approx(0.25345144771897427, abs=1e-12)
        assert w == pytest.approx(0.2534, abs=1e-4)

    def test_monotone_in_zeroed_bits(self):
        # Enumerate every mask at k <= 10: weight never increases when a bit
        # is cleared.
        for k in range(1, 11):
            for bits in itertools.product((0, 1), repeat=k):
                mask = np.array(bits)
                w = kernel_weight(mask, 0.25)
                for j in range(k):
                    if mask[j] == 1:
                        cleared = mask.copy()
                        cleared[j] = 0
                        assert kernel_weight(cleared, 0.25) <= w + 1e-15

    def test_all_zeros_uses_distance_one(self):
        sigma = 0.7
        assert kernel_weight(np.zeros(5), sigma) == pytest.approx(
            math.exp(-1.0 / sigma**2), abs=1e-15
        )

    def test_instance_row_has_max_weight(self, rng):
        masks = sample_masks(12, 200, seed=1)
        w = kernel_weights(masks, 0.25)
        assert np.argmax(w) == 0 and w[0] == 1.0

    def test_sigma_validation(self):
        with pytest.raises(InvalidParam):
            kernel_weight(np.ones(3), 0.0)


class TestSelectFeatures:
    def test_perfect_single_predictor(self, rng):
        masks = sample_masks(5, 60, seed=3).astype(float)
        y = masks[:, 2].copy()
        assert select_features(masks, y, np.ones(60), 1) == [2]

    def test_constant_targets_select_nothing(self, rng):
        masks = sample_masks(4, 50, seed=4).astype(float)
        assert select_features(masks, np.full(50, 0.7), np.ones(50), 3) == []

    def test_matches_brute_force_on_planted_signal(self):
        # 2*col0 + col2 + tiny noise: greedy must pick 0 then 2, and the
        # greedy path must agree with exhaustive weighted-RSS enumeration.
        rng = np.random.default_rng(77)
        masks = sample_masks(4, 200, seed=5).astype(float)
        y = 2.0 * masks[:, 0] + 1.0 * masks[:, 2] + 0.01 * rng.standard_normal(200)
        w = kernel_weights(masks, 0.25)

        picked = select_features(masks, y, w, 2)
        assert picked == [0, 2]

        singles = {j: oracle_wls_rss(masks[:, [j]], y, w) for j in range(4)}
        assert min(singles, key=singles.get) == 0
        pairs = {
            (a, b): oracle_wls_rss(masks[:, [a, b]], y, w)
            for a, b in itertools.combinations(range(4), 2)
        }
        assert min(pairs, key=pairs.get) == (0, 2)

    def test_budget_respected(self, rng):
        masks = sample_masks(8, 120, seed=6).astype(float)
        y = rng.random(120)
        for k in (1, 3, 5):
            assert len(select_features(masks, y, np.ones(120), k)) <= k


class TestWeightedRidge:
    def test_exact_linear_data(self):
        x = np.arange(10, dtype=float).reshape(-1, 1)
        coef, intercept, r2 = fit_weighted_ridge(x, 3.0 * x[:, 0], np.ones(10), 0.0)
        assert coef[0] == pytest.approx(3.0, abs=1e-12)
        assert intercept == pytest.approx(0.0, abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_huge_alpha_shrinks_to_weighted_mean(self):
        rng = np.random.default_rng(8)
        X = rng.random((40, 2))
        y = rng.random(40)
        w = rng.random(40) + 0.1
        coef, intercept, _ = fit_weighted_ridge(X, y, w, 1e9)
        assert np.all(np.abs(coef) < 1e-3)
        assert intercept == pytest.approx(float(w @ y / w.sum()), abs=1e-3)

    def test_matches_closed_form_single_feature(self):
        # Independent oracle: solve the 2x2 normal equations by Cramer's rule
        # for model y = beta*x + b with unpenalized intercept.
        x = np.array([0.0, 1.0, 2.0, 3.0])
        y = np.array([1.0, 3.0, 5.0, 7.0])
        w = np.array([1.0, 1.0, 1.0, 10.0])
        alpha = 0.1
        swx2, swx, sw = w @ x**2, w @ x, w.sum()
        swxy, swy = w @ (x * y), w @ y
        det = (swx2 + alpha) * sw - swx * swx
        beta_oracle = (swxy * sw - swx * swy) / det
        b_oracle = ((swx2 + alpha) * swy - swx * swxy) / det
        coef, intercept, _ = fit_weighted_ridge(x.reshape(-1, 1), y, w, alpha)
        assert coef[0] == pytest.approx(beta_oracle, abs=1e-10)
        assert intercept == pytest.approx(b_oracle, abs=1e-10)

    def test_singular_design_reported_at_alpha_zero(self):
        x = np.ones((6, 2))
        x[:, 1] = np.arange(6)
        X = np.concatenate([x, x[:, 1:]], axis=1)  # duplicated column
        with pytest.raises(SingularSystem):
            fit_weighted_ridge(X, np.arange(6, dtype=float), np.ones(6), 0.0)

    def test_weight_validation(self):
        X = np.arange(8, dtype=float).reshape(-1, 1)
        with pytest.raises(InvalidParam):
            fit_weighted_ridge(X, np.arange(8, dtype=float), np.full(8, -1.0), 0.1)
        w = np.zeros(8)
        w[0] = 1.0
        with pytest.raises(InvalidParam):
            fit_weighted_ridge(X, np.arange(8, dtype=float), w, 0.1)


class TestPerturbationBatch:
    def test_validates_row_zero(self):
        masks = np.ones((6, 2), dtype=np.int8)
        masks[0, 0] = 0
        probs = np.full((6, 3), 1 / 3)
        with pytest.raises(InvalidParam):
            PerturbationBatch(masks, probs)

    def test_validates_row_sums(self):
        masks = sample_masks(2, 6, seed=0)
        probs = np.full((6, 3), 0.4)
        with pytest.raises(InvalidParam):
            PerturbationBatch(masks, probs)

    def test_requires_enough_rows(self):
        masks = sample_masks(5, 6, seed=0)
        probs = np.full((6, 2), 0.5)
        with pytest.raises(InvalidParam):
            PerturbationBatch(masks, probs)


def planted_setup(rng, *, slope="positive", p_on=1.0, p_off=0.0, target_segments=12):
    img = noise_image_avoiding_gray(rng, 32, 32)
    seg = slic_segment(img, target_segments=target_segments, seed=0)
    planted = 3 % seg.num_segments
    oracle = make_planted_oracle(
        seg, {planted}, target_class=1, num_classes=4,
        p_on=p_on, p_off=p_off, slope=slope, original=img,
    )
    return img, seg, planted, oracle


class TestExplainInstance:
    def test_recovers_planted_segment(self, rng):
        img, seg, planted, oracle = planted_setup(rng)
        cfg = SurrogateConfig(n_samples=500, num_features=1, baseline="gray", seed=11)
        expl = explain_instance(img, oracle, seg, 1, cfg)
        assert expl.selected_features == (planted,)
        assert expl.weights[0] == pytest.approx(1.0, abs=0.05)
        assert expl.local_r2 >= 0.99
        assert expl.instance_prob == pytest.approx(1.0)

    def test_negative_oracle_gives_negative_weight(self, rng):
        img, seg, planted, oracle = planted_setup(rng, slope="negative")
        cfg = SurrogateConfig(n_samples=500, num_features=1, baseline="gray", seed=11)
        expl = explain_instance(img, oracle, seg, 1, cfg)
        assert expl.selected_features == (planted,)
        assert expl.weights[0] < 0

    def test_constant_classifier_flagged_degenerate(self, rng):
        img, seg, _, _ = planted_setup(rng)
        constant = make_constant_classifier(4)
        cfg = SurrogateConfig(n_samples=200, num_features=2, seed=0)
        expl = explain_instance(img, constant, seg, 1, cfg)
        assert expl.selected_features == ()
        assert expl.local_r2 == 0.0
        assert "degenerate-classifier" in expl.flags

    def test_bit_reproducible(self, rng):
        img, seg, _, oracle = planted_setup(rng)
        cfg = SurrogateConfig(n_samples=300, num_features=2, baseline="gray", seed=21)
        a = explain_instance(img, oracle, seg, 1, cfg)
        b = explain_instance(img, oracle, seg, 1, cfg)
        assert a == b

    def test_faithful_on_affine_multi_segment_oracle(self, rng):
        # Target prob is exactly affine in the mask bits of the planted set
        # with slopes (p_on - p_off) * size_j / total; the surrogate must
        # recover the support and come within 2% of those slopes.
        img = noise_image_avoiding_gray(rng, 32, 32)
        seg = slic_segment(img, target_segments=10, seed=0)
        planted = [1, 4]
        sizes = np.bincount(seg.labels.ravel(), minlength=seg.num_segments)
        total = sizes[planted].sum()
        p_on, p_off = 0.9, 0.1
        oracle = make_planted_oracle(
            seg, planted, target_class=0, num_classes=3,
            p_on=p_on, p_off=p_off, original=img,
        )
        cfg = SurrogateConfig(
            n_samples=1500, num_features=2, ridge_alpha=1e-3, baseline="gray", seed=5
        )
        expl = explain_instance(img, oracle, seg, 0, cfg)
        assert sorted(expl.selected_features) == planted
        got = dict(zip(expl.selected_features, expl.weights))
        for j in planted:
            true_slope = (p_on - p_off) * sizes[j] / total
            assert got[j] == pytest.approx(true_slope, rel=0.02)

    def test_target_class_bound_checked(self, rng):
        img, seg, _, oracle = planted_setup(rng)
        cfg = SurrogateConfig(n_samples=100, num_features=1, seed=0)
        with pytest.raises(InvalidParam):
            explain_instance(img, oracle, seg, 4, cfg)

    def test_json_schema_fields(self, rng):
        img, seg, planted, oracle = planted_setup(rng)
        cfg = SurrogateConfig(n_samples=200, num_features=1, baseline="gray", seed=2)
        d = explanation_to_dict(explain_instance(img, oracle, seg, 1, cfg))
        assert d["schema_version"] == 1
        assert set(d) == {
            "schema_version", "target_class", "features", "intercept",
            "local_r2", "config", "instance_prob", "flags",
        }
        assert d["features"][0]["segment"] == planted
        assert set(d["config"]) == {
            "n_samples", "sigma", "num_features", "ridge_alpha", "baseline", "seed",
        }


class TestSurrogateConfig:
    def test_validation(self):
        with pytest.raises(InvalidParam):
            SurrogateConfig(n_samples=3, num_features=5)
        with pytest.raises(InvalidParam):
            SurrogateConfig(sigma=0.0)
        with pytest.raises(InvalidParam):
            SurrogateConfig(ridge_alpha=-0.1)
        with pytest.raises(InvalidParam):
            SurrogateConfig(baseline="blur")
