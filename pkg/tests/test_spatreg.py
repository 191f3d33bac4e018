from itertools import permutations

import numpy as np
import pytest

from arbor4d.esrvf import EsrvfBranch, EsrvfTree, apply_rotation, esrvf_forward, tree_forward
from arbor4d.metric import MetricWeights, nearest_slot, positional_map, subtree_normsq, tree_dist_sq_aligned
from arbor4d.spatreg import (
    RegistrationOptions,
    match_subtrees,
    optimal_reparam_branch,
    optimal_rotation,
    parse_registration,
    register_sequence,
    register_trees,
    serialize_registration,
)
from arbor4d.synthgen import GrowthSpec, gen_tree, gen_tree4d
from arbor4d.treemodel import Branch, normalize_translation

from conftest import attached_tree, smooth_branch


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def brute_force_matching(cost, null1, null2):
    """Exhaustive minimum over all partial matchings with null options."""
    k1, k2 = cost.shape
    best = (np.inf, None)
    idx2 = list(range(k2))
    from itertools import combinations

    for size in range(0, min(k1, k2) + 1):
        for rows in combinations(range(k1), size):
            for cols in permutations(idx2, size):
                total = sum(cost[i, j] for i, j in zip(rows, cols))
                total += sum(null1[i] for i in range(k1) if i not in rows)
                total += sum(null2[j] for j in range(k2) if j not in cols)
                if total < best[0]:
                    best = (total, tuple(zip(rows, cols)))
    return best


def matching_cost(matching, cost, null1, null2):
    total = sum(cost[i, j] for i, j in matching.pairs)
    total += sum(null1[i] for i in matching.unmatched1)
    total += sum(null2[j] for j in matching.unmatched2)
    return total


class TestOptimalRotation:
    def test_identity_for_equal_trees(self, rng):
        q = tree_forward(attached_tree(rng))
        rot, degenerate = optimal_rotation(q, q)
        assert not degenerate
        assert np.max(np.abs(rot - np.eye(3))) < 1e-12

    def test_recovers_random_rotations(self, rng):
        q = tree_forward(attached_tree(rng, depth=3))
        for _ in range(10):
            r = random_rotation(rng)
            q2 = apply_rotation(q, r)
            rot, degenerate = optimal_rotation(q, q2)
            assert not degenerate
            assert np.linalg.norm(rot @ r - np.eye(3)) < 1e-8

    def test_mirrored_planar_stays_proper(self, rng):
        # planar tree mirrored: the unconstrained optimum is improper.
        t = np.linspace(0, 1, 30)
        pts = np.column_stack([t, np.sin(2 * t), np.zeros(30), np.full(30, 0.05)])
        q = EsrvfTree(esrvf_forward(Branch(pts)))
        mirrored = EsrvfTree(
            EsrvfBranch(q.main.v * np.array([1.0, -1.0, 1.0]), q.main.rad, q.main.origin)
        )
        rot, _ = optimal_rotation(q, mirrored)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)

    def test_degenerate_returns_identity_flag(self):
        q = EsrvfTree(esrvf_forward(Branch(np.column_stack([np.linspace(0, 1, 10), np.zeros(10), np.zeros(10), np.zeros(10)]))))
        rot, degenerate = optimal_rotation(q, q)
        assert degenerate
        assert np.array_equal(rot, np.eye(3))


class TestOptimalReparam:
    def test_identity_for_equal(self, rng):
        q = esrvf_forward(smooth_branch(rng, n=40))
        warp, cost = optimal_reparam_branch(q, q, 40)
        assert cost <= 1e-10
        assert warp.is_identity()

    def test_recovers_known_warp(self, rng):
        from arbor4d.esrvf import apply_reparam
        from arbor4d.warps import Diffeo

        n = 80
        q = esrvf_forward(smooth_branch(rng, n=n))
        grid = np.linspace(0, 1, n)
        g = Diffeo(grid + 0.06 * np.sin(np.pi * grid))
        q2 = apply_reparam(q, g.inverse())
        warp, _ = optimal_reparam_branch(q, q2, n)
        assert np.max(np.abs(warp.values - g.values)) <= 2.0 / n + 0.02

    def test_grid_validation(self, rng):
        q = esrvf_forward(smooth_branch(rng, n=20))
        with pytest.raises(ValueError):
            optimal_reparam_branch(q, q, 1)
        with pytest.raises(ValueError):
            optimal_reparam_branch(q, q, 21)


class TestMatchSubtrees:
    def test_identity_on_zero_diagonal(self):
        cost = np.ones((3, 3)) - np.eye(3)
        null = np.full(3, 10.0)
        m = match_subtrees(cost, null, null)
        assert m.pairs == ((0, 0), (1, 1), (2, 2))
        assert m.unmatched1 == () and m.unmatched2 == ()

    def test_ties_resolve_to_lowest_indices(self):
        cost = np.zeros((2, 2))
        null = np.full(2, 1.0)
        m = match_subtrees(cost, null, null)
        assert m.pairs == ((0, 0), (1, 1))

    def test_forced_null_when_other_side_empty(self):
        m = match_subtrees(np.zeros((1, 0)), np.array([0.3]), np.zeros(0))
        assert m.pairs == ()
        assert m.unmatched1 == (0,)

    def test_matches_brute_force(self):
        # 200 seeded random cases up to 6 children per side.
        for case in range(200):
            r = np.random.Generator(np.random.PCG64(case))
            k1 = int(r.integers(0, 7))
            k2 = int(r.integers(0, 7))
            cost = r.uniform(0, 1, size=(k1, k2))
            null1 = r.uniform(0, 1, size=k1)
            null2 = r.uniform(0, 1, size=k2)
            m = match_subtrees(cost, null1, null2)
            got = matching_cost(m, cost, null1, null2)
            want, _ = brute_force_matching(cost, null1, null2)
            if k1 == 0 and k2 == 0:
                assert got == 0.0
            else:
                assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_rejects_invalid_costs(self):
        with pytest.raises(ValueError):
            match_subtrees(np.array([[np.inf]]), np.array([1.0]), np.array([1.0]))


class TestRegisterTrees:
    def test_self_registration(self, rng):
        q = tree_forward(attached_tree(rng, depth=3, n=40))
        reg, d = register_trees(q, q)
        assert d < 1e-8
        assert np.allclose(reg.rotation, np.eye(3))

    def test_rotated_and_shuffled_copy(self, rng):
        t = normalize_translation(gen_tree(GrowthSpec(depth=3, children=(2, 2), seed=8), samples=50))
        q1 = tree_forward(t)
        r = random_rotation(rng)
        q2 = apply_rotation(q1, r)
        q2 = EsrvfTree(q2.main, tuple(reversed(q2.children)))
        w = MetricWeights()
        opts = RegistrationOptions(grid=50)
        before = np.sqrt(tree_dist_sq_aligned(q1, q2, positional_map(q1, q2, 50), w))
        reg, after = register_trees(q1, q2, w, opts)
        assert after / before < 1e-6
        # the matching inverts the shuffle
        k = len(q1.children)
        assert sorted(reg.root.matching.pairs) == [(i, k - 1 - i) for i in range(k)]

    def test_deleted_subtree_costs_its_null_match(self, rng):
        t = normalize_translation(gen_tree(GrowthSpec(depth=3, children=(2, 2), seed=9), samples=50))
        q1 = tree_forward(t)
        q2 = EsrvfTree(q1.main, q1.children[1:])
        w = MetricWeights()
        reg, d = register_trees(q1, q2, w, RegistrationOptions(grid=50))
        s_gone = q1.children[0][0]
        survivors = np.array([s for s, _ in q1.children[1:]])
        analytic = w.lambda_s * subtree_normsq(q1.children[0][1], w)
        analytic += w.lambda_p * (s_gone - nearest_slot(s_gone, survivors)) ** 2
        assert d**2 == pytest.approx(analytic, abs=1e-6)

    def test_registration_never_worse_than_identity(self, rng):
        w = MetricWeights()
        for _ in range(3):
            q1 = tree_forward(attached_tree(rng, depth=2, n=30))
            q2 = tree_forward(attached_tree(rng, depth=2, n=30))
            opts = RegistrationOptions(grid=30)
            before = tree_dist_sq_aligned(q1, q2, positional_map(q1, q2, 30), w)
            _, after = register_trees(q1, q2, w, opts)
            assert after**2 <= before + 1e-12

    def test_exact_permutation_mode(self, rng):
        # equal child counts: with exact permutations forced, every child
        # must be matched
        t = normalize_translation(gen_tree(GrowthSpec(depth=2, children=(3, 3), seed=12), samples=30))
        q1 = tree_forward(t)
        q2 = EsrvfTree(q1.main, tuple(reversed(q1.children)))
        opts = RegistrationOptions(grid=30, exact_permutation=True)
        reg, d = register_trees(q1, q2, MetricWeights(), opts)
        assert reg.root.matching.unmatched1 == ()
        assert reg.root.matching.unmatched2 == ()
        assert d < 1e-6

    def test_map_serialization_round_trip(self, rng):
        q1 = tree_forward(attached_tree(rng, depth=2, n=20))
        q2 = tree_forward(attached_tree(rng, depth=2, n=20))
        reg, _ = register_trees(q1, q2, MetricWeights(), RegistrationOptions(grid=20))
        data = serialize_registration(reg)
        again = parse_registration(data)
        assert serialize_registration(again) == data
        w = MetricWeights()
        assert tree_dist_sq_aligned(q1, q2, again, w) == pytest.approx(
            tree_dist_sq_aligned(q1, q2, reg, w), rel=1e-12
        )


class TestRegisterSequence:
    def test_constant_sequence_identity_maps(self, rng):
        t = attached_tree(rng, depth=2, n=30)
        from arbor4d.treemodel import Tree4D

        seq = Tree4D(np.linspace(0, 1, 4), (t, t, t, t))
        result = register_sequence(seq, MetricWeights(), RegistrationOptions(grid=30))
        assert len(result.frames) == 4
        for reg in result.maps:
            assert np.allclose(reg.rotation, np.eye(3))
            assert reg.root.warp.is_identity(1e-9)
        for frame in result.frames[1:]:
            assert np.allclose(frame.main.v, result.frames[0].main.v, atol=1e-12)

    def test_rotating_sequence_small_residual(self, rng):
        from arbor4d.treemodel import Tree4D

        t = normalize_translation(gen_tree(GrowthSpec(depth=2, children=(2, 2), seed=4), samples=40))
        q = tree_forward(t)
        frames = [t]
        th = 0.3
        rot = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1.0]])
        from arbor4d.esrvf import tree_inverse

        cur = q
        for _ in range(3):
            cur = apply_rotation(cur, rot)
            frames.append(tree_inverse(cur))
        seq = Tree4D(np.linspace(0, 1, 4), tuple(frames))
        w = MetricWeights()
        result = register_sequence(seq, w, RegistrationOptions(grid=40))
        for a, b in zip(result.frames, result.frames[1:]):
            from arbor4d.metric import tree_dist_sq_congruent

            assert np.sqrt(tree_dist_sq_congruent(a, b, w)) < 1e-6

    def test_growth_with_birth_tracked_as_null(self):
        spec = GrowthSpec(depth=2, children=(2, 2), frames=5, seed=1, birth_schedule=(("0/1", 3),))
        seq = gen_tree4d(spec, samples=40)
        result = register_sequence(seq, MetricWeights(), RegistrationOptions(grid=40))
        # all output frames share one topology
        counts = {frame.branch_count() for frame in result.frames}
        assert counts == {3}
        # the late-born branch is null before its birth frame
        from arbor4d.metric import subtree_normsq

        w = MetricWeights()
        norms = np.array(
            [[subtree_normsq(sub, w) for _, sub in frame.children] for frame in result.frames]
        )
        born_col = np.argmin(norms[0])
        assert np.all(norms[:3, born_col] == 0.0)
        assert np.all(norms[3:, born_col] > 0.0)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            register_sequence([], MetricWeights())
