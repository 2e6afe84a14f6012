import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import components_bfs, confusion_loop
from skyrmseg import evaluation as ev
from skyrmseg import unet
from skyrmseg.errors import ConfigError, ShapeError


def counts(tp, tn, fp, fn):
    return ev.ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


class TestConfusion:
    def test_identical(self):
        m = np.random.default_rng(0).integers(0, 3, (9, 9))
        c = ev.confusion_from_masks(m, m)
        assert c.fp == c.fn == 0 and ev.mcc(c) == 1.0

    def test_all_positive_vs_negative(self):
        c = ev.confusion_from_masks(np.ones((10, 10), int), np.zeros((10, 10), int))
        assert (c.tp, c.tn, c.fp, c.fn) == (0, 0, 100, 0)

    @pytest.mark.parametrize("seed", range(120))
    def test_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 4))
        h, w = rng.integers(1, 17, 2)
        p, t = rng.integers(0, k, (2, h, w))
        c = ev.confusion_from_masks(p, t)
        assert (c.tp, c.tn, c.fp, c.fn) == confusion_loop(p, t, (1,))
        assert c.total == h * w

    def test_positive_rule(self):
        p = np.array([[2, 1, 0]])
        t = np.array([[2, 0, 0]])
        c = ev.confusion_from_masks(p, t, positive=(1, 2))
        assert (c.tp, c.fp) == (1, 1)
        assert ev.confusion_from_masks(p, t, positive=lambda m: m == 2).tp == 1

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            ev.confusion_from_masks(np.zeros((2, 3)), np.zeros((3, 2)))


class TestMCC:
    def test_worked_examples(self):
        assert ev.mcc(counts(1, 1, 0, 0)) == 1.0
        assert ev.mcc(counts(0, 0, 1, 1)) == -1.0
        assert ev.mcc(counts(90, 1, 4, 5)) == pytest.approx(0.13524, abs=1e-5)
        assert ev.mcc(counts(90, 1, 4, 5)) == 70 / math.sqrt(94 * 95 * 5 * 6)

    def test_zero_denominator(self):
        assert ev.mcc(counts(0, 10, 0, 0)) == 0.0
        assert ev.mcc(counts(0, 0, 0, 0)) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(st.tuples(*[st.integers(0, 10**6)] * 4))
    def test_range_and_symmetries(self, c):
        tp, tn, fp, fn = c
        m = ev.mcc(counts(tp, tn, fp, fn))
        assert -1.0 <= m <= 1.0
        assert ev.mcc(counts(tn, tp, fn, fp)) == pytest.approx(m, abs=1e-12)
        assert ev.mcc(counts(fn, fp, tn, tp)) == pytest.approx(-m, abs=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_formula_oracle(self, seed):
        tp, tn, fp, fn = (int(v) for v in np.random.default_rng(seed).integers(0, 500, 4))
        den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        ref = 0.0 if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)
        assert ev.mcc(counts(tp, tn, fp, fn)) == pytest.approx(ref, rel=1e-12, abs=1e-15)


class TestComponents:
    def test_empty(self):
        assert ev.connected_components(np.zeros((5, 5), int), 1) == []

    def test_block(self):
        m = np.zeros((7, 7), int)
        m[2:5, 1:4] = 1
        (c,) = ev.connected_components(m, 1)
        assert c.size == 9 and c.centroid == (3.0, 2.0)

    def test_diagonal(self):
        m = np.array([[1, 0], [0, 1]])
        assert ev.count_components(m, 1, 8) == 1
        assert ev.count_components(m, 1, 4) == 2

    def test_invalid(self):
        with pytest.raises(ConfigError):
            ev.connected_components(np.zeros((2, 2)), 3)
        with pytest.raises(ConfigError):
            ev.connected_components(np.zeros((2, 2)), 1, connectivity=6)

    @pytest.mark.parametrize("seed", range(120))
    def test_bfs_oracle(self, seed):
        rng = np.random.default_rng(seed)
        h, w = rng.integers(1, 20, 2)
        m = (rng.random((h, w)) < rng.uniform(0.2, 0.7)).astype(np.uint8) * int(rng.integers(1, 3))
        cls = int(m.max()) or 1
        for conn in (4, 8):
            got = ev.connected_components(m, cls, conn)
            ref = components_bfs(m, cls, conn)
            assert len(got) == len(ref)
            for g, r in zip(got, ref):
                assert sorted(map(tuple, g.pixels.tolist())) == sorted(r)
            assert sum(g.size for g in got) == int((m == cls).sum())

    @pytest.mark.parametrize("seed", range(20))
    def test_speckle_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = (rng.random((24, 24)) < 0.3).astype(np.uint8)
        ref = sum(1 for comp in components_bfs(m, 1, 8) if len(comp) <= 10)
        assert ev.speckle_count(m, 1, 10) == ref <= ev.count_components(m, 1)

    def test_speckle_examples(self):
        m = np.zeros((40, 40), np.uint8)
        m[0, 0] = m[5, 5] = m[20, 30] = 1
        assert ev.speckle_count(m) == 3
        yy, xx = np.mgrid[:40, :40]
        disks = ((yy - 10) ** 2 + (xx - 10) ** 2 <= 32) | ((yy - 28) ** 2 + (xx - 28) ** 2 <= 32)
        assert ev.speckle_count(disks.astype(np.uint8)) == 0


class TestHistogram:
    def test_bins(self):
        m = np.zeros((20, 20), np.uint8)
        m[0:3, 0:3] = 1
        m[10:13, 0:3] = 1
        m[10:15, 10:15] = 1
        h = ev.size_histogram([m], 1, [0, 10, 30])
        assert h.counts.tolist() == [2, 1] and h.counts.sum() == 3
        assert h.mean == pytest.approx(43 / 3)

    def test_empty(self):
        h = ev.size_histogram([np.zeros((4, 4), np.uint8)], 1)
        assert not h.counts.any() and h.empty and math.isnan(h.mean)

    def test_bad_bins(self):
        with pytest.raises(ConfigError):
            ev.size_histogram([], 1, [0])
        with pytest.raises(ConfigError):
            ev.size_histogram([], 1, [0, 5, 5])

    def test_secondary_mode_and_csv(self, tmp_path):
        h = ev.SizeHistogram(np.array([0, 10, 20, 30, 40.0]), np.array([5, 1, 3, 0]),
                             np.zeros(9))
        assert h.modes() == [5.0, 25.0] and h.secondary_mode == 25.0
        h.write_csv(tmp_path / "h.csv")
        rows = list(csv.reader(open(tmp_path / "h.csv")))
        assert rows[0] == ["bin_lo", "bin_hi", "count"] and rows[1] == ["0", "10", "5"]


def zero_head_predict(k):
    cfg = unet.UNetConfig(depth=1, base_channels=2, num_classes=k, input_size=(8, 8))
    p = unet.init_params(cfg, 0)
    p["head.weight"][:] = 0
    return lambda x: unet.predict(p, cfg, x)


class TestProbe:
    def test_zero_head_background(self):
        res = ev.greyscale_probe(zero_head_predict(3), 3, (8, 8))
        assert len(res.levels) == 256
        assert not res.dominant.any() and res.transitions() == []

    def test_threshold_model(self, tmp_path):
        def thresh(x):
            return (x < 88 / 255.0).astype(np.uint8)

        res = ev.greyscale_probe(thresh, 2, (4, 4))
        assert res.transitions() == [88]
        assert res.dominant[0] == 1 and res.dominant[-1] == 0
        res.write_csv(tmp_path / "p.csv")
        rows = list(csv.reader(open(tmp_path / "p.csv")))
        assert rows[0] == ["level", "dominant_class", "frac_background", "frac_skyrmion"]
        assert rows[88 + 1][1] == "background" and rows[87 + 1][1] == "skyrmion"
        ev.render_probe_png(tmp_path / "p.png", res)
        assert (tmp_path / "p.png").read_bytes()[:4] == b"\x89PNG"


class TestInversion:
    def test_threshold_model_bimodal(self):
        rng = np.random.default_rng(0)
        img = np.where(rng.random((32, 32)) < 0.2, 0.25, 0.7) + rng.normal(0, 0.02, (32, 32))
        rep = ev.inversion_experiment(lambda x: (x < 0.5).astype(np.uint8), img, 2)
        assert abs(rep.fractions_inverted[1] - rep.fractions_original[0]) < 0.1

    @pytest.mark.parametrize("level", [0.1, 0.5, 0.9])
    def test_constant_image(self, level):
        rep = ev.inversion_experiment(lambda x: (x < 0.5).astype(np.uint8),
                                      np.full((8, 8), level), 2)
        assert rep.agreement in (0.0, 1.0)
        assert set(rep.fractions_original) <= {0.0, 1.0}


def test_evaluate_masks_and_csv(tmp_path):
    rng = np.random.default_rng(3)
    triples = [(f"im{i}", rng.integers(0, 3, (8, 8)), rng.integers(0, 3, (8, 8))) for i in range(3)]
    rows, pooled = ev.evaluate_masks(triples)
    total = sum((r.counts for r in rows), ev.ConfusionCounts())
    assert pooled == ev.mcc(total)
    ev.write_metrics_csv(tmp_path / "m.csv", rows)
    header = next(csv.reader(open(tmp_path / "m.csv")))
    assert header == ["file", "tp", "tn", "fp", "fn", "mcc", "speckles"]
    ev.render_histogram_png(tmp_path / "h.png", ev.size_histogram([t[1] for t in triples], 1))
    assert (tmp_path / "h.png").stat().st_size > 0
