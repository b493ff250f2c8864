import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpurify.errors import ValidationError
from twinpurify.interpret import (
    PrerankedList,
    dim_gene_correlation,
    export_rnk,
    gene_sets,
    read_rnk,
    signature_genes,
    signature_union,
    uniqueness_permutation_test,
    uniqueness_score,
)


def _list(genes, dim=0):
    """Ranked list with the given order and strictly descending scores."""
    n = len(genes)
    return PrerankedList(dim, tuple(genes), np.linspace(1.0, -1.0, n))


def _genes(n):
    return [f"g{i:04d}" for i in range(n)]


class TestCorrelation:
    def test_self_and_negated(self, rng):
        E = rng.standard_normal((30, 2))
        X = np.column_stack([E[:, 0], -E[:, 1], rng.standard_normal(30)])
        lists = dim_gene_correlation(E, X, ["a", "b", "c"])
        assert lists[0].genes[0] == "a" and abs(lists[0].scores[0] - 1.0) < 1e-12
        assert lists[1].genes[-1] == "b" and abs(lists[1].scores[-1] + 1.0) < 1e-12

    def test_independent_small(self):
        small = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            r = dim_gene_correlation(rng.standard_normal((1000, 1)), rng.standard_normal((1000, 1)), ["g"])[0].scores[0]
            small += abs(r) < 0.1
        assert small >= 99

    def test_constant_gene(self, rng):
        X = np.column_stack([rng.standard_normal(10), np.full(10, 3.0)])
        lst = dim_gene_correlation(rng.standard_normal((10, 1)), X, ["v", "k"])[0]
        assert lst.constant == frozenset({"k"})
        assert lst.scores[list(lst.genes).index("k")] == 0.0

    def test_tie_order(self, rng):
        e = rng.standard_normal(8)
        X = np.column_stack([e, e, e])
        assert dim_gene_correlation(e, X, ["z", "b", "m"])[0].genes == ("b", "m", "z")

    def test_errors(self, rng):
        with pytest.raises(ValidationError, match="rows"):
            dim_gene_correlation(np.zeros((4, 1)), rng.random((5, 2)), ["a", "b"])
        with pytest.raises(ValidationError, match="at least 3"):
            dim_gene_correlation(rng.random((2, 1)), rng.random((2, 2)), ["a", "b"])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
    def test_affine_invariant(self, seed, a, b):
        rng = np.random.default_rng(seed)
        E, X = rng.standard_normal((20, 1)), rng.standard_normal((20, 15))
        genes = _genes(15)
        ref = dim_gene_correlation(E, X, genes)[0]
        moved = dim_gene_correlation(a * E + b, X, genes)[0]
        assert np.allclose(ref.scores, moved.scores, atol=1e-10)


class TestRnk:
    def test_three_lines(self, tmp_path):
        lst = PrerankedList(0, ("A", "B", "C"), np.array([0.9, 0.1, -0.5]))
        path = export_rnk(lst, tmp_path / "d.rnk")
        lines = path.read_text().splitlines()
        assert [ln.split("\t")[0] for ln in lines] == ["A", "B", "C"]
        back = read_rnk(path)
        assert back.genes == lst.genes and np.array_equal(back.scores, lst.scores)

    def test_tab_in_id(self, tmp_path):
        lst = PrerankedList(0, ("A\tB",), np.array([0.1]))
        with pytest.raises(ValidationError, match="illegal character"):
            export_rnk(lst, tmp_path / "x.rnk")

    def test_unsorted_rejected(self):
        with pytest.raises(ValidationError, match="descending"):
            PrerankedList(0, ("a", "b"), np.array([0.1, 0.2]))


class TestUniqueness:
    def test_disjoint(self):
        g = _genes(16)
        lists = [_list(g[4 * k:4 * k + 2] + [x for x in g if x not in g[4 * k:4 * k + 4]] + g[4 * k + 2:4 * k + 4], k)
                 for k in range(4)]
        assert uniqueness_score(lists, 2).tolist() == [1.0] * 4

    def test_identical(self):
        g = _genes(10)
        assert uniqueness_score([_list(g), _list(g, 1)], 3).tolist() == [0.0, 0.0]

    def test_hand_count(self):
        # S_0 = {a, b, y, z}, S_1 = {a, c, w, x}: one shared gene
        l0 = _list(["a", "b", "c", "d", "w", "x", "y", "z"])
        l1 = _list(["a", "c", "b", "d", "y", "z", "w", "x"], 1)
        assert gene_sets([l0, l1], 2) == [frozenset("abyz"), frozenset("acwx")]
        assert uniqueness_score([l0, l1], 2).tolist() == [0.75, 0.75]

    def test_top_n_too_large(self):
        g = _genes(10)
        with pytest.raises(ValidationError, match="too large"):
            uniqueness_score([_list(g), _list(g, 1)], 6)

    def test_single_dimension(self):
        with pytest.raises(ValidationError, match="at least 2"):
            uniqueness_score([_list(_genes(10))], 2)

    def test_disjoint_p_floor(self):
        g = _genes(2000)
        lists = [_list(g[100 * k:100 * k + 50] + [x for x in g if x not in g[100 * k:100 * k + 100]] + g[100 * k + 50:100 * k + 100], k)
                 for k in range(4)]
        res = uniqueness_permutation_test(lists, 50, 200, 0)
        assert all(r.unique == 1.0 and r.p_value == 1 / 201 for r in res)

    def test_zero_unique_p_one(self):
        g = _genes(40)
        res = uniqueness_permutation_test([_list(g), _list(g, 1)], 5, 50, 0)
        assert all(r.unique == 0.0 and r.p_value == 1.0 for r in res)

    def test_deterministic_and_bounds(self, rng):
        g = _genes(200)
        lists = [_list(list(rng.permutation(g)), k) for k in range(3)]
        a = uniqueness_permutation_test(lists, 20, 99, 5)
        b = uniqueness_permutation_test(lists, 20, 99, 5)
        assert a == b
        assert all(1 / 100 <= r.p_value <= 1.0 and 0.0 <= r.unique <= 1.0 for r in a)

    def test_n_perm_positive(self):
        g = _genes(10)
        with pytest.raises(ValidationError, match="n_perm"):
            uniqueness_permutation_test([_list(g), _list(g, 1)], 2, 0)

    def test_p_monotone_in_u(self):
        # more private genes in dimension 0 can only lower its p-value
        g = _genes(300)
        base = _list(g, 1)
        ps = []
        for shift in (0, 5, 10, 20):
            order = g[shift:] + g[:shift]
            ps.append(uniqueness_permutation_test([_list(order), base, _list(g[::-1], 2)], 20, 200, 3)[0])
        us = [r.unique for r in ps]
        assert us == sorted(us)
        assert all(b.p_value <= a.p_value for a, b in zip(ps, ps[1:]))


class TestSignatures:
    def test_boundary(self):
        g = _genes(40)
        sig = signature_genes(_list(g), 20, 20)
        assert sig.top == tuple(g[:20]) and set(sig.bottom) == set(g[20:])
        assert sig.bottom[0] == g[-1]

    def test_ties_lexicographic(self, rng):
        e = rng.standard_normal(10)
        X = np.column_stack([e] * 3 + [rng.standard_normal(10) for _ in range(3)])
        lst = dim_gene_correlation(e, X, ["t3", "t1", "t2", "x", "y", "z"])[0]
        assert signature_genes(lst, 2, 0).top == ("t1", "t2")

    def test_too_short(self):
        with pytest.raises(ValidationError, match="fewer than 40"):
            signature_genes(_list(_genes(30)))

    def test_union_bound(self, rng):
        g = _genes(100)
        sigs = [signature_genes(_list(list(rng.permutation(g)), k)) for k in range(4)]
        u = signature_union(sigs)
        assert len(u) <= 160 and len(set(u)) == len(u)
        assert all(not set(s.top) & set(s.bottom) for s in sigs)
