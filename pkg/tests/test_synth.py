import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpurify.classify import fit_multinomial_lr, macro_f1
from twinpurify.data import NORMAL, TUMOR, split_cohort
from twinpurify.errors import ValidationError
from twinpurify.survival import km_curve, log_rank_test
from twinpurify.synth import PN, SynthConfig, generate_cohort, generate_survival


def _tumor_rows(m):
    return np.array([i for i, s in enumerate(m.samples) if s.kind == TUMOR])


class TestGenerateCohort:
    def test_shapes_and_labels(self):
        cfg = SynthConfig(n_genes=300, n_tumor=30, n_normal=10, seed=1)
        m, truth = generate_cohort(cfg)
        assert m.shape == (40, 300)
        assert sum(s.kind == NORMAL for s in m.samples) == 10
        assert {s.subtype for s in m.samples if s.kind == NORMAL} == {PN}
        assert {s.grade for s in m.samples if s.kind == TUMOR} == {1, 2, 3}
        assert len(truth.blocks) == 3 and len(truth.normal_blocks) == cfg.n_normal_programs

    def test_pure_noise_free_subtypes_identical(self):
        cfg = SynthConfig(n_genes=200, n_tumor=30, n_normal=5, noise_sd=0.0, purity_range=(1.0, 1.0))
        m, _ = generate_cohort(cfg)
        for name in cfg.subtype_names:
            rows = m.values[[i for i, s in enumerate(m.samples) if s.subtype == name]]
            assert np.array_equal(rows, np.broadcast_to(rows[0], rows.shape))

    def test_zero_purity_is_normal(self):
        # with per-sample normal activity the background varies, so it is switched off here
        cfg = SynthConfig(n_genes=200, n_tumor=20, n_normal=5, noise_sd=0.0, purity_range=(0.0, 0.0),
                          normal_activity_sd=0.0)
        m, _ = generate_cohort(cfg)
        assert np.allclose(m.values, m.values[-1], rtol=0, atol=1e-12)

    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(n_genes=150, n_tumor=20, n_normal=5, seed=9, hazard_weights=(0.5, 0.0, -0.5))
        a, _ = generate_cohort(cfg)
        b, _ = generate_cohort(cfg)
        assert a.values.tobytes() == b.values.tobytes() and a.samples == b.samples

    def test_too_few_genes(self):
        with pytest.raises(ValidationError, match="n_genes < n_subtypes"):
            SynthConfig(n_genes=2, n_subtypes=3)

    @pytest.mark.parametrize("kw", [{"purity_range": (0.9, 0.3)}, {"noise_sd": -1.0}, {"n_subtypes": 1},
                                    {"hazard_weights": (1.0,)}, {"block_fraction": 0.5}])
    def test_bad_config(self, kw):
        with pytest.raises(ValidationError):
            SynthConfig(**kw)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValidationError, match="unknown"):
            SynthConfig.from_dict({"n_gene": 10})
        cfg = SynthConfig(hazard_weights=(1.0, 0.0, -1.0))
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg

    def test_purity_monotone(self):
        G = 300
        corr = []
        for p in (0.1, 0.4, 0.7, 1.0):
            cfg = SynthConfig(n_genes=G, n_tumor=30, n_normal=0, noise_sd=0.0, purity_range=(p, p), seed=4)
            m, truth = generate_cohort(cfg)
            prog = truth.loadings[truth.subtype_index[: cfg.n_tumor]]
            corr.append(np.mean([np.corrcoef(m.values[i], prog[i])[0, 1] for i in range(cfg.n_tumor)]))
        assert all(b > a for a, b in zip(corr, corr[1:]))

    @pytest.mark.slow
    def test_raw_linear_classifier_at_full_purity(self):
        m, _ = generate_cohort(SynthConfig(purity_range=(1.0, 1.0), seed=0))
        m = m.select_kind(TUMOR)
        sp = split_cohort(m, 0.8, "subtype", 0)
        X, y = m.values, np.array([s.subtype for s in m.samples], dtype=object)
        mu, sd = X[sp.train_indices].mean(0), X[sp.train_indices].std(0) + 1e-8
        Z = (X - mu) / sd
        lr = fit_multinomial_lr(Z[sp.train_indices], y[sp.train_indices])
        pred = lr.predict(Z[sp.test_indices])
        assert macro_f1(y[sp.test_indices], pred, lr.vocabulary) >= 0.95


class TestGenerateSurvival:
    def _cohort(self, seed, weights, **kw):
        cfg = SynthConfig(n_genes=60, n_tumor=150, n_normal=5, seed=seed, **kw)
        m, _ = generate_cohort(cfg)
        return generate_survival(m, weights, seed, censor_max_time=kw.get("censor_max_time", 240.0),
                                 subtype_names=cfg.subtype_names)

    @staticmethod
    def _group(m, name):
        rows = [s for s in m.samples if s.subtype == name]
        return np.array([s.surv_time for s in rows]), np.array([s.surv_event for s in rows])

    def test_equal_hazards_calibrated(self):
        significant = 0
        for seed in range(100):
            m = self._cohort(seed, (0.0, 0.0, 0.0))
            res = log_rank_test(*self._group(m, "Basal"), *self._group(m, "LumA"))
            significant += res.p_value < 0.01
        assert significant <= 5

    def test_high_hazard_curve_below(self):
        w = (np.log(10.0), 0.0, 0.0)
        m = self._cohort(2, w)
        t_all = np.array([s.surv_time for s in m.samples if s.kind == TUMOR])
        t_med = float(np.median(t_all))
        high = km_curve(*self._group(m, "Basal"))(t_med)
        for other in ("Her2", "LumA"):
            assert high < km_curve(*self._group(m, other))(t_med)

    def test_no_censoring(self):
        m = self._cohort(0, (0.1, 0.2, 0.3), censor_max_time=None)
        assert all(s.surv_event for s in m.samples if s.kind == TUMOR)
        assert all(s.surv_time is None for s in m.samples if s.kind == NORMAL)

    def test_wrong_weight_count(self):
        m, _ = generate_cohort(SynthConfig(n_genes=30, n_tumor=9, n_normal=0))
        with pytest.raises(ValidationError, match="one entry per subtype"):
            generate_survival(m, (1.0, 2.0), 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_times_positive(self, seed):
        m = self._cohort(seed, (0.5, 0.0, -0.5))
        t = np.array([s.surv_time for s in m.samples if s.kind == TUMOR])
        assert (t > 0).all() and (t <= 240.0).all()
