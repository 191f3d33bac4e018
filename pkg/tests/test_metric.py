import numpy as np
import pytest

from arbor4d.esrvf import EsrvfTree, esrvf_forward, tree_forward
from arbor4d.metric import (
    MetricWeights,
    apply_map,
    branch_dist_sq,
    complete_pair,
    congruent,
    geodesic,
    midpoint,
    positional_map,
    subtree_normsq,
    tree_dist_sq_aligned,
    tree_dist_sq_congruent,
)
from arbor4d.treemodel import Branch

from conftest import attached_tree


def line_q(length=1.0, n=20, r=0.0):
    t = np.linspace(0.0, length, n)
    return esrvf_forward(Branch(np.column_stack([t, np.zeros(n), np.zeros(n), np.full(n, r)])))


class TestWeights:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            MetricWeights(lambda_m=-1.0)

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            MetricWeights(0.0, 0.0, 0.0, 1.0)


class TestBranchDist:
    def test_identical_is_zero(self, rng):
        q = line_q()
        assert branch_dist_sq(q, q) == 0.0

    def test_hand_integrated_value(self):
        # unit x-segment (v = (1,0,0)) vs length-4 segment (v = (2,0,0)):
        # integrand |1-2|^2 = 1 everywhere, so the integral is exactly 1.
        assert branch_dist_sq(line_q(1.0), line_q(4.0)) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self, rng):
        q1 = tree_forward(attached_tree(rng)).main
        q2 = tree_forward(attached_tree(rng)).main
        assert branch_dist_sq(q1, q2) == pytest.approx(branch_dist_sq(q2, q1), abs=0.0)

    def test_mismatched_n_rejected(self):
        with pytest.raises(ValueError):
            branch_dist_sq(line_q(n=10), line_q(n=12))

    def test_radius_weight(self):
        q1 = line_q(1.0, r=0.0)
        q2 = line_q(1.0, r=0.5)
        assert branch_dist_sq(q1, q2, w_rad=2.0) == pytest.approx(2.0 * 0.25, abs=1e-12)


def flat_depth2_cost(q1, q2a, root_map, w):
    """Independent evaluator enumerating every term for depth-2 trees."""
    total = w.lambda_m * np.trapezoid(
        np.sum((q1.main.v - q2a.main.v) ** 2, axis=1)
        + w.w_rad * (q1.main.rad - q2a.main.rad) ** 2,
        dx=1.0 / (q1.main.n - 1),
    )
    matched1 = {i for i, _ in root_map.matching.pairs}
    matched2 = {j for _, j in root_map.matching.pairs}
    s2m = [q2a.children[j][0] for _, j in sorted(root_map.matching.pairs)]
    s1m = [q1.children[i][0] for i, _ in sorted(root_map.matching.pairs)]
    for i, j in root_map.matching.pairs:
        s1, sub1 = q1.children[i]
        s2, sub2 = q2a.children[j]
        total += w.lambda_p * (s1 - s2) ** 2
        total += w.lambda_s * w.lambda_m * np.trapezoid(
            np.sum((sub1.main.v - sub2.main.v) ** 2, axis=1)
            + w.w_rad * (sub1.main.rad - sub2.main.rad) ** 2,
            dx=1.0 / (sub1.main.n - 1),
        )
    for i, (s1, sub1) in enumerate(q1.children):
        if i in matched1:
            continue
        near = min(s2m, key=lambda x: abs(x - s1)) if s2m else s1
        total += w.lambda_s * w.lambda_m * np.trapezoid(
            np.sum(sub1.main.v**2, axis=1) + w.w_rad * sub1.main.rad**2,
            dx=1.0 / (sub1.main.n - 1),
        )
        total += w.lambda_p * (s1 - near) ** 2
    for j, (s2, sub2) in enumerate(q2a.children):
        if j in matched2:
            continue
        near = min(s1m, key=lambda x: abs(x - s2)) if s1m else s2
        total += w.lambda_s * w.lambda_m * np.trapezoid(
            np.sum(sub2.main.v**2, axis=1) + w.w_rad * sub2.main.rad**2,
            dx=1.0 / (sub2.main.n - 1),
        )
        total += w.lambda_p * (s2 - near) ** 2
    return total


class TestTreeDist:
    def test_self_distance_zero(self, rng):
        q = tree_forward(attached_tree(rng))
        m = positional_map(q, q, 20)
        assert tree_dist_sq_aligned(q, q, m, MetricWeights()) == pytest.approx(0.0, abs=1e-20)

    def test_bifurcation_term(self, rng):
        # one matched child, identical geometry, s = 0.3 vs 0.5, lambda_p = 1
        child = line_q(0.5, n=20)
        q1 = EsrvfTree(line_q(1.0, 20), ((0.3, EsrvfTree(child)),))
        q2 = EsrvfTree(line_q(1.0, 20), ((0.5, EsrvfTree(child)),))
        w = MetricWeights(lambda_p=1.0)
        m = positional_map(q1, q2, 20)
        assert tree_dist_sq_aligned(q1, q2, m, w) == pytest.approx(0.04, abs=1e-12)

    def test_matches_flat_evaluator_depth2(self, rng):
        w = MetricWeights(1.0, 0.7, 0.4, 1.3)
        for _ in range(8):
            q1 = tree_forward(attached_tree(rng, depth=2, n=24))
            q2 = tree_forward(attached_tree(rng, depth=2, n=24))
            m = positional_map(q1, q2, 24)
            got = tree_dist_sq_aligned(q1, q2, m, w)
            want = flat_depth2_cost(q1, q2, m.root, w)
            assert got == pytest.approx(want, rel=1e-12)

    def test_nonnegative(self, rng):
        q1 = tree_forward(attached_tree(rng))
        q2 = tree_forward(attached_tree(rng))
        m = positional_map(q1, q2, 20)
        assert tree_dist_sq_aligned(q1, q2, m, MetricWeights()) >= 0.0

    def test_common_rotation_invariance(self, rng):
        q1 = tree_forward(attached_tree(rng))
        q2 = tree_forward(attached_tree(rng))
        a = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        if np.linalg.det(a) < 0:
            a[:, 0] *= -1
        from arbor4d.esrvf import apply_rotation

        w = MetricWeights()
        m = positional_map(q1, q2, 20)
        d0 = tree_dist_sq_aligned(q1, q2, m, w)
        d1 = tree_dist_sq_aligned(apply_rotation(q1, a), apply_rotation(q2, a), m, w)
        assert abs(d0 - d1) < 1e-12 * max(d0, 1.0)


class TestCompletion:
    def test_unmatched_children_padded_with_nulls(self, rng):
        q1 = tree_forward(attached_tree(rng, depth=2))
        q2 = EsrvfTree(q1.main, q1.children[:1])
        m = positional_map(q1, q2, 20)
        c1, c2 = complete_pair(q1, apply_map(q2, m), m.root)
        assert congruent(c1, c2)
        assert len(c1.children) == len(q1.children)
        # padded slot on side 2 has zero norm
        extra = c2.children[-1][1]
        assert subtree_normsq(extra, MetricWeights()) == 0.0

    def test_duplicate_indices_rejected(self):
        from arbor4d.metric import Matching

        with pytest.raises(ValueError):
            Matching(pairs=((0, 0), (0, 1)))
        with pytest.raises(ValueError):
            Matching(pairs=((0, 0),), unmatched1=(0,))

    def test_identity_evaluation_matches_aligned_cost(self, rng):
        w = MetricWeights(1.0, 0.8, 0.3, 1.0)
        q1 = tree_forward(attached_tree(rng, depth=3, n=16))
        q2 = tree_forward(attached_tree(rng, depth=3, n=16))
        m = positional_map(q1, q2, 16)
        c1, c2 = complete_pair(q1, apply_map(q2, m), m.root)
        assert tree_dist_sq_congruent(c1, c2, w) == pytest.approx(
            tree_dist_sq_aligned(q1, q2, m, w), rel=1e-14
        )


class TestGeodesic:
    def _pair(self, rng):
        q1 = tree_forward(attached_tree(rng, depth=2, n=20))
        q2 = tree_forward(attached_tree(rng, depth=2, n=20))
        m = positional_map(q1, q2, 20)
        return complete_pair(q1, apply_map(q2, m), m.root)

    def test_two_steps_returns_endpoints(self, rng):
        c1, c2 = self._pair(rng)
        path = geodesic(c1, c2, 2)
        assert path[0] is c1 and path[-1] is c2

    def test_midpoint_is_arithmetic_mean(self, rng):
        c1, c2 = self._pair(rng)
        mid = midpoint(c1, c2)
        assert np.allclose(mid.main.v, 0.5 * (c1.main.v + c2.main.v))
        assert mid.children[0][0] == pytest.approx(0.5 * (c1.children[0][0] + c2.children[0][0]))

    def test_distance_linear_in_tau(self, rng):
        w = MetricWeights()
        c1, c2 = self._pair(rng)
        path = geodesic(c1, c2, 5)
        full = np.sqrt(tree_dist_sq_congruent(c1, c2, w))
        for j, q in enumerate(path):
            tau = j / 4
            d = np.sqrt(tree_dist_sq_congruent(c1, q, w))
            assert abs(d - tau * full) < 1e-9 * max(full, 1.0)

    def test_additive_along_path(self, rng):
        w = MetricWeights()
        c1, c2 = self._pair(rng)
        path = geodesic(c1, c2, 5)
        d02 = np.sqrt(tree_dist_sq_congruent(path[0], path[2], w))
        d24 = np.sqrt(tree_dist_sq_congruent(path[2], path[4], w))
        d04 = np.sqrt(tree_dist_sq_congruent(path[0], path[4], w))
        assert abs(d02 + d24 - d04) < 1e-9 * max(d04, 1.0)

    def test_unmatched_child_shrinks_to_null_along_path(self, rng):
        q1 = tree_forward(attached_tree(rng, depth=2, n=20))
        q2 = EsrvfTree(q1.main, q1.children[:1])
        m = positional_map(q1, q2, 20)
        c1, c2 = complete_pair(q1, apply_map(q2, m), m.root)
        mid = midpoint(c1, c2)
        # the child present only in q1 has half its velocity amplitude at
        # the middle of the path
        extra1 = c1.children[-1][1]
        extra_mid = mid.children[-1][1]
        assert np.allclose(extra_mid.main.v, 0.5 * extra1.main.v)
        assert np.allclose(extra_mid.main.rad, 0.5 * extra1.main.rad)

    def test_topology_mismatch_rejected(self, rng):
        q1 = tree_forward(attached_tree(rng, depth=2))
        q2 = EsrvfTree(q1.main, q1.children[:1])
        with pytest.raises(ValueError):
            geodesic(q1, q2, 3)

    def test_rejects_single_step(self, rng):
        c1, c2 = self._pair(rng)
        with pytest.raises(ValueError):
            geodesic(c1, c2, 1)
