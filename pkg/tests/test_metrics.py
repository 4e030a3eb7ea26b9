from fractions import Fraction

import numpy as np
import pytest

from otdet.metrics import (
    auroc,
    density,
    evaluate,
    fpr_at_tpr,
    write_density_csv,
    write_metrics_json,
)

from oracles import auroc_pairs, density_counts, fpr_threshold_scan


class TestFprAtTpr:
    def test_perfect_separation(self):
        fpr, _ = fpr_at_tpr(np.ones(10), np.zeros(10))
        assert fpr == 0.0

    def test_total_overlap(self):
        fpr, lam = fpr_at_tpr([0.5] * 10, [0.5] * 10)
        assert lam == 0.5
        assert fpr == 1.0

    def test_frozen_threshold_scan_case(self):
        ids = np.arange(1, 101) / 100.0
        oods = np.array([0.01, 0.05, 0.07])
        fpr, lam = fpr_at_tpr(ids, oods)
        assert lam == pytest.approx(0.06)
        assert fpr == 1 / 3

    def test_matches_scan_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            ids = rng.normal(size=rng.integers(1, 60))
            oods = rng.normal(size=rng.integers(1, 60))
            if rng.random() < 0.3:  # force ties across the two sets
                oods = np.concatenate([oods, rng.choice(ids, size=3)])
            fpr, lam = fpr_at_tpr(ids, oods)
            ref_fpr, ref_lam = fpr_threshold_scan(ids, oods)
            assert lam == ref_lam
            assert fpr == ref_fpr

    def test_rejects_empty_and_bad_target(self):
        with pytest.raises(ValueError, match="empty"):
            fpr_at_tpr([], [1.0])
        with pytest.raises(ValueError, match="empty"):
            fpr_at_tpr([1.0], [])
        with pytest.raises(ValueError, match="tpr_target"):
            fpr_at_tpr([1.0], [0.0], tpr_target=0.0)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([2.0, 3.0], [0.0, 1.0]) == 1.0

    def test_all_equal_is_half(self):
        assert auroc([0.3] * 5, [0.3] * 7) == 0.5

    def test_hand_counted_pairs(self):
        assert auroc([0.9, 0.4], [0.5, 0.1]) == 0.75

    def test_matches_pair_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            ids = rng.integers(0, 8, size=rng.integers(1, 40)).astype(float)
            oods = rng.integers(0, 8, size=rng.integers(1, 40)).astype(float)
            assert auroc(ids, oods) == auroc_pairs(list(ids), list(oods))

    def test_swap_symmetry_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            ids = rng.integers(0, 6, size=rng.integers(1, 30)).astype(float)
            oods = rng.integers(0, 6, size=rng.integers(1, 30)).astype(float)
            den = 2 * len(ids) * len(oods)
            a = Fraction(round(auroc(ids, oods) * den), den)
            b = Fraction(round(auroc(oods, ids) * den), den)
            assert a + b == 1

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        ids = rng.normal(size=50)
        oods = rng.normal(size=40)
        base_auroc = auroc(ids, oods)
        base_fpr, base_lam = fpr_at_tpr(ids, oods)
        for transform in (lambda x: 3.0 * x + 2.0, np.exp, lambda x: x ** 3):
            assert auroc(transform(ids), transform(oods)) == base_auroc
            fpr, lam = fpr_at_tpr(transform(ids), transform(oods))
            assert fpr == base_fpr
            assert lam == transform(np.array([base_lam]))[0]


class TestDensity:
    def test_single_bin(self):
        out = density([0.2], [0.8], bins=1)
        assert list(out.id_counts) == [1]
        assert list(out.ood_counts) == [1]

    def test_max_value_lands_in_last_bin(self):
        out = density([0.0], [1.0], bins=2)
        np.testing.assert_allclose(out.bin_edges, [0.0, 0.5, 1.0])
        assert list(out.ood_counts) == [0, 1]
        assert list(out.id_counts) == [1, 0]

    def test_degenerate_range_collapses_to_one_bin(self):
        out = density([0.4, 0.4], [0.4], bins=10)
        assert out.id_counts.size == 1
        assert out.id_counts[0] == 2 and out.ood_counts[0] == 1
        assert out.bin_edges[0] < 0.4 < out.bin_edges[1]

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(4)
        ids = rng.uniform(size=200)
        oods = rng.uniform(size=150)
        out = density(ids, oods, bins=13)
        assert list(out.id_counts) == density_counts(ids, out.bin_edges)
        assert list(out.ood_counts) == density_counts(oods, out.bin_edges)
        assert out.id_counts.sum() == 200
        assert out.ood_counts.sum() == 150

    def test_bins_must_be_positive(self):
        with pytest.raises(ValueError, match="bins"):
            density([1.0], [2.0], bins=0)


def test_report_files(tmp_path):
    report, export = evaluate(np.ones(4), np.zeros(4), bins=2)
    write_metrics_json(report, tmp_path / "metrics.json")
    write_density_csv(export, tmp_path / "density.csv")
    import json

    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert set(doc) == {"fpr95", "auroc", "threshold", "n_id", "n_ood"}
    assert doc["fpr95"] == 0.0 and doc["auroc"] == 1.0
    assert doc["n_id"] == 4 and doc["n_ood"] == 4
    lines = (tmp_path / "density.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,id_count,ood_count"
    assert len(lines) == 3
