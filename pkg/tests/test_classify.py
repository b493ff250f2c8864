import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BENCHMARK_SEEDS
from twinpurify.augment import DilutionSpec
from twinpurify.benchmark import BENCHMARK_RATES, DILUTION_FAMILIES
from twinpurify.classify import (
    dilution_eval,
    fit_cv_ensemble,
    fit_multinomial_lr,
    macro_f1,
    majority_vote,
    per_category_f1,
    stratified_kfold,
    write_dilution_csv,
    write_trajectories_csv,
)
from twinpurify.data import NORMAL, split_cohort
from twinpurify.errors import ValidationError
from twinpurify.models import pca_fit

labels = st.sampled_from(["A", "B", "C"])


class TestMultinomialLR:
    def test_separable(self, rng):
        X = np.vstack([rng.normal(-3, 0.5, (20, 2)), rng.normal(3, 0.5, (20, 2))])
        y = np.array(["a"] * 20 + ["b"] * 20, dtype=object)
        m = fit_multinomial_lr(X, y, 1e-4)
        assert (m.predict(X) == y).all()

    def test_zero_features_give_frequencies(self):
        y = np.array(["a"] * 6 + ["b"] * 3 + ["c"] * 1, dtype=object)
        m = fit_multinomial_lr(np.zeros((10, 3)), y, 1e-3, tol=1e-10)
        assert np.allclose(m.predict_proba(np.zeros((1, 3)))[0], [0.6, 0.3, 0.1], atol=1e-8)

    def test_duplicated_samples(self, rng):
        X, y = rng.standard_normal((30, 3)), rng.choice(["a", "b", "c"], 30).astype(object)
        m1 = fit_multinomial_lr(X, y, 1e-2, tol=1e-9)
        m2 = fit_multinomial_lr(np.vstack([X, X]), np.concatenate([y, y]), 1e-2, tol=1e-9)
        probe = rng.standard_normal((200, 3))
        assert (m1.predict(probe) == m2.predict(probe)).all()

    def test_single_category(self):
        with pytest.raises(ValidationError, match="two categories"):
            fit_multinomial_lr(np.ones((3, 2)), ["a", "a", "a"])

    def test_iteration_cap_warns(self, rng):
        X, y = rng.standard_normal((40, 4)), rng.choice(["a", "b"], 40).astype(object)
        with pytest.warns(RuntimeWarning, match="stopped after 2 iterations"):
            m = fit_multinomial_lr(X, y, 1e-3, max_iter=2)
        assert not m.converged and np.isfinite(m.loss)

    def test_convex_restarts(self, rng):
        X, y = rng.standard_normal((50, 4)), rng.choice(["a", "b", "c"], 50).astype(object)
        losses = [fit_multinomial_lr(X, y, 1e-2, init=(rng.normal(0, 3, (4, 3)), rng.normal(0, 3, 3))).loss
                  for _ in range(5)]
        assert max(losses) - min(losses) < 1e-6


class TestFolds:
    def test_divisible(self):
        y = np.repeat(list("abcde"), 10)
        f = stratified_kfold(y, 5, 0)
        for k in range(5):
            for c in "abcde":
                assert np.sum((f == k) & (y == c)) == 2

    def test_small_category(self):
        with pytest.raises(ValidationError, match="fewer than k=5"):
            stratified_kfold(["a"] * 10 + ["b"] * 3, 5)

    def test_deterministic(self):
        y = np.repeat(list("ab"), 13)
        assert np.array_equal(stratified_kfold(y, 5, 4), stratified_kfold(y, 5, 4))

    @settings(max_examples=30)
    @given(st.lists(st.integers(5, 30), min_size=2, max_size=5), st.integers(0, 1000))
    def test_balanced(self, sizes, seed):
        y = np.concatenate([[f"c{i}"] * n for i, n in enumerate(sizes)])
        f = stratified_kfold(y, 5, seed)
        for c in set(y):
            counts = np.bincount(f[y == c], minlength=5)
            assert counts.max() - counts.min() <= 1

    def test_ensemble_coverage(self, rng):
        X, y = rng.standard_normal((40, 2)), np.repeat(["a", "b"], 20).astype(object)
        ens = fit_cv_ensemble(X, y, 5, 0)
        assert len(ens.models) == 5 and set(np.bincount(ens.folds)) == {8}
        assert all(l2 in (1e-4, 1e-3, 1e-2) for l2 in ens.selected_l2)


class TestVote:
    def test_majority(self):
        assert majority_vote([["A"], ["A"], ["A"], ["B"], ["B"]])[0] == "A"

    def test_probability_tie_break(self):
        preds = [["A"], ["A"], ["B"], ["B"], ["C"]]
        probs = np.array([[[0.4, 0.35, 0.25]]] * 5)
        assert majority_vote(preds, probs, ("A", "B", "C"))[0] == "A"
        probs = np.array([[[0.3, 0.45, 0.25]]] * 5)
        assert majority_vote(preds, probs, ("A", "B", "C"))[0] == "B"

    def test_lexicographic_fallback(self):
        assert majority_vote([["B"], ["B"], ["A"], ["A"], ["C"]])[0] == "A"

    def test_unanimous(self):
        assert majority_vote([["C", "A"]] * 5).tolist() == ["C", "A"]

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            majority_vote([["A", "B"], ["A"]])


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1(["A", "B", "C"], ["A", "B", "C"], "ABC") == 1.0

    def test_half(self):
        assert per_category_f1(list("AABB"), list("ABAB"), "AB") == {"A": 0.5, "B": 0.5}
        assert macro_f1(list("AABB"), list("ABAB"), "AB") == 0.5

    def test_one_third(self):
        assert abs(macro_f1(list("AABB"), list("AAAA"), "AB") - 1 / 3) < 1e-15

    def test_absent_category_excluded(self):
        assert per_category_f1(list("AB"), list("AB"), "ABC")["C"] is None
        assert macro_f1(list("AB"), list("AB"), "ABC") == 1.0

    def test_unknown_label(self):
        with pytest.raises(ValidationError, match="unknown label"):
            macro_f1(["A"], ["Z"], "AB")

    @given(st.lists(st.tuples(labels, labels), min_size=1, max_size=30), st.randoms())
    def test_order_invariant(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        a = macro_f1([t for t, _ in pairs], [p for _, p in pairs], "ABC")
        b = macro_f1([t for t, _ in shuffled], [p for _, p in shuffled], "ABC")
        assert abs(a - b) < 1e-15 and 0.0 <= a <= 1.0


@pytest.fixture(scope="module")
def pca_report(small_cohort):
    m, _ = small_cohort
    sp = split_cohort(m, 0.8, "subtype", 0)
    train, test = m.take(sp.train_indices), m.take(sp.test_indices)
    pool = test.select_kind(NORMAL)
    model = pca_fit(train.select_kind("Tumor"), 4)
    spec = DilutionSpec(rates=(0.0, 0.5, 1.0), seed=0)
    return model, train, test, dilution_eval(model, train, test, pool, spec, name="PCA")


class TestDilutionEval:
    def test_clean_accuracy(self, pca_report):
        assert pca_report[3].macro_f1[0] >= 0.95

    def test_full_dilution_is_normal(self, pca_report):
        traj = pca_report[3].trajectories
        assert np.mean(traj[:, -1] == "PN") >= 0.9

    def test_rate_zero_matches_clean(self, pca_report):
        model, train, test, rep = pca_report
        ens = fit_cv_ensemble(model.encode(train), train.labels("subtype"), 5, 0)
        assert (rep.trajectories[:, 0] == ens.predict(model.encode(test))).all()

    def test_report_shape(self, pca_report):
        rep = pca_report[3]
        assert rep.trajectories.shape == (len(rep.sample_ids), 3)
        assert rep.fold_macro_f1.shape == (3, 5) and len(rep.category_f1) == 3

    def test_csv(self, tmp_path, pca_report):
        rep = pca_report[3]
        path = write_dilution_csv([rep], tmp_path / "d.csv")
        rows = list(csv.DictReader(path.open()))
        assert [float(r["rate"]) for r in rows] == [0.0, 0.5, 1.0]
        assert abs(float(rows[0]["macro_f1"]) - rep.macro_f1[0]) < 1e-12
        traj = list(csv.reader(write_trajectories_csv(rep, tmp_path / "t.csv").open()))
        assert len(traj) == len(rep.sample_ids) + 1 and len(traj[0]) == 2 + 3

    def test_unknown_test_label(self, small_cohort):
        m, _ = small_cohort
        sp = split_cohort(m, 0.8, "subtype", 0)
        train, test = m.take(sp.train_indices), m.take(sp.test_indices)
        train = train.select_kind("Tumor")
        with pytest.raises(ValidationError, match="missing from training vocabulary"):
            dilution_eval(pca_fit(train, 4), train, test, test.select_kind(NORMAL), DilutionSpec(rates=(0.0,)))


@pytest.mark.slow
class TestMonotoneContamination:
    def test_degradation(self, dilution_runs):
        runs, _ = dilution_runs
        assert len(runs) == len(BENCHMARK_SEEDS)
        for fam in DILUTION_FAMILIES:
            mean = [np.mean([r.macro_f1(fam, rate) for r in runs]) for rate in BENCHMARK_RATES]
            for a, b in zip(mean, mean[1:]):
                assert b <= a + 0.05, (fam, mean)
