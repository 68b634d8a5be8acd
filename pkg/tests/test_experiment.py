import math

import numpy as np
import pytest

from dynscan.acquire import AcquisitionConfig, PointwiseMode, run_acquisition
from dynscan.core import GridSpec, MeasurementMask, apply_mask
from dynscan.experiment import (PSNR_CAP_DB, capped_psnr, erd_psnr_auc,
                                export_corpus, generate_training_corpus,
                                optimize_c, psnr, read_optimize_table,
                                run_metrics, train_model, trapezoid_auc,
                                write_optimize_table)
from dynscan.ingest import generate_phantom
from dynscan.models import OracleModel, RandomModel
from dynscan.rd import DynamicWindow, RdParams, StaticWindow, approx_rd


class TestPsnr:
    def test_identical_planes_hit_cap(self):
        p = np.random.default_rng(0).uniform(size=(4, 4)) + 0.1
        assert psnr(p, p) == math.inf
        assert capped_psnr(p, p) == PSNR_CAP_DB

    def test_hand_case_three_db(self):
        truth = np.array([0.0, 1.0])
        est = np.array([0.0, 0.0])
        # MSE 0.5, peak 1 -> 10 log10(2)
        assert psnr(truth, est) == pytest.approx(10 * math.log10(2.0), abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        truth = rng.uniform(0.1, 1, size=(5, 5))
        est = truth + rng.normal(0, 0.05, size=(5, 5))
        base = psnr(truth, est)
        for alpha in (0.3, 7.0):
            assert psnr(alpha * truth, alpha * est) == pytest.approx(base, rel=1e-9)

    def test_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.ones((2, 2)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)) + 1, np.zeros((2, 3)))


class TestAuc:
    def test_trapezoid_against_known_integral(self):
        x = np.array([1.0, 2.0, 3.0])
        y = np.array([2.0, 4.0, 6.0])
        assert trapezoid_auc(x, y) == pytest.approx(8.0, abs=1e-12)

    def test_monotone_dominance(self):
        rng = np.random.default_rng(2)
        x = np.arange(1, 31, dtype=float)
        lower = rng.uniform(10, 20, size=30)
        upper = lower + rng.uniform(0, 5, size=30)
        assert trapezoid_auc(x, upper) >= trapezoid_auc(x, lower)


class TestTrainingCorpus:
    def test_cardinality_and_density_counts(self):
        samples = [generate_phantom(s, GridSpec(10, 10), 2) for s in range(2)]
        params = RdParams(c=8.0, window=DynamicWindow(3.0))
        corpus = generate_training_corpus(samples, params,
                                          densities=range(1, 31), seed=0)
        assert len(corpus.entries) == 60
        by_density = {e.density_percent: e for e in corpus.entries
                      if e.sample_index == 0}
        assert by_density[30].mask.n_measured == 30  # 30% of 100 cells
        assert by_density[1].mask.n_measured == 1

    def test_deterministic_regeneration(self):
        samples = [generate_phantom(5, GridSpec(8, 8), 1)]
        params = RdParams(c=4.0, window=StaticWindow(5))
        a = generate_training_corpus(samples, params, densities=(5, 10), seed=3)
        b = generate_training_corpus(samples, params, densities=(5, 10), seed=3)
        for ea, eb in zip(a.entries, b.entries):
            assert np.array_equal(ea.mask.measured, eb.mask.measured)
            assert np.array_equal(ea.rd.planes, eb.rd.planes)

    def test_train_ls_and_mlp_from_corpus(self):
        samples = [generate_phantom(s, GridSpec(10, 10), 2) for s in range(2)]
        params = RdParams(c=8.0, window=DynamicWindow(3.0))
        corpus = generate_training_corpus(samples, params,
                                          densities=(5, 10, 20), seed=1)
        ls = train_model(corpus, "ls")
        assert ls.theta.shape == (7,)
        mlp = train_model(corpus, "mlp", mlp_epochs=3, max_rows_per_entry=50)
        assert len(mlp.weights) == 6

    def test_export_corpus_layout(self, tmp_path):
        import json
        samples = [generate_phantom(7, GridSpec(6, 6), 2)]
        params = RdParams(c=8.0, window=DynamicWindow(3.0))
        corpus = generate_training_corpus(samples, params, densities=(10,), seed=2,
                                          sample_names=["p7"])
        out = export_corpus(corpus, tmp_path / "corpus")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["rows"] == 6 and manifest["in_planes"] == 3
        entry = manifest["entries"][0]
        for chan in entry["channels"]:
            data = np.fromfile(out / chan["input"], dtype="<f4")
            assert data.size == 3 * 36
            rd = np.fromfile(out / chan["rd"], dtype="<f4")
            assert rd.size == 36


class TestOptimizeC:
    def _samples(self):
        return [generate_phantom(s, GridSpec(8, 8), 1) for s in (0, 1)]

    def test_singleton_candidate_returns_it(self):
        res = optimize_c(self._samples(), [4.0], [DynamicWindow(3.0)],
                         cfg=AcquisitionConfig(mode=PointwiseMode(),
                                               stop_fov_percent=10.0))
        assert res.best_c == 4.0
        assert res.best_window == "dyn:3"
        assert len(res.table) == 1

    def test_argmax_matches_emitted_table(self, tmp_path):
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=12.0)
        res = optimize_c(self._samples(), [2.0, 8.0],
                         [DynamicWindow(3.0), StaticWindow(5)], cfg=cfg, seed=1)
        write_optimize_table(res, tmp_path / "table.csv")
        rows = read_optimize_table(tmp_path / "table.csv")
        best = max(rows, key=lambda r: r.auc)
        assert (res.best_c, res.best_window) == (best.c, best.window_desc)
        assert best.auc == pytest.approx(max(r.auc for r in res.table), abs=1e-5)

    def test_candidate_order_invariance(self):
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=10.0)
        a = optimize_c(self._samples(), [2.0, 8.0], [DynamicWindow(3.0)], cfg=cfg)
        b = optimize_c(self._samples(), [8.0, 2.0], [DynamicWindow(3.0)], cfg=cfg)
        assert (a.best_c, a.best_window) == (b.best_c, b.best_window)

    def test_worker_pool_matches_serial(self):
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=8.0)
        serial = optimize_c(self._samples(), [4.0, 8.0], [DynamicWindow(3.0)],
                            cfg=cfg, seed=2, workers=1)
        pooled = optimize_c(self._samples(), [4.0, 8.0], [DynamicWindow(3.0)],
                            cfg=cfg, seed=2, workers=2)
        assert (serial.best_c, serial.best_window) == (pooled.best_c, pooled.best_window)
        for rs, rp in zip(sorted(serial.table, key=lambda r: (r.c, r.window_desc)),
                          sorted(pooled.table, key=lambda r: (r.c, r.window_desc))):
            assert rs.auc == pytest.approx(rp.auc, abs=0)


class TestRunMetricsAndErdAuc:
    def test_metrics_curve_shape(self):
        sample = generate_phantom(3, GridSpec(12, 12), 2)
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=10.0)
        run = run_acquisition(sample, RandomModel(seed=0), cfg, seed=0)
        m = run_metrics(run)
        assert m.psnr_per_channel.shape == (len(m.milestones), 2)
        assert m.auc > 0
        assert np.array_equal(m.milestones, np.arange(1, len(m.milestones) + 1))

    def test_oracle_self_comparison_hits_cap(self):
        sample = generate_phantom(4, GridSpec(10, 10), 1)
        params = RdParams(c=8.0, window=DynamicWindow(3.0))
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=8.0)
        run = run_acquisition(sample, OracleModel(params), cfg, seed=1)
        auc = erd_psnr_auc(run, sample, params)
        n = len(run.milestones)
        assert auc == pytest.approx(PSNR_CAP_DB * (n - 1), rel=1e-12)

    def test_zero_erd_model_below_oracle(self):
        sample = generate_phantom(5, GridSpec(10, 10), 1)
        params = RdParams(c=8.0, window=DynamicWindow(3.0))
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=8.0)
        oracle_run = run_acquisition(sample, OracleModel(params), cfg, seed=2)
        # zero model halts instantly on erd-zero; use random run's mask trail
        # but a zero ERD snapshot: compare against an all-zero estimate per
        # milestone instead
        rnd_run = run_acquisition(sample, RandomModel(seed=3), cfg, seed=2)
        for ms in rnd_run.milestones:
            ms_zero = ms.erd_averaged * 0.0
            mask = MeasurementMask(sample.grid, ms.mask)
            rd = approx_rd(sample, apply_mask(sample, mask), params)
            if rd.averaged.max() > 0:
                assert capped_psnr(rd.averaged, ms_zero) < PSNR_CAP_DB
        oracle_auc = erd_psnr_auc(oracle_run, sample, params)
        rnd_auc = erd_psnr_auc(rnd_run, sample, params)
        assert rnd_auc < oracle_auc
