import numpy as np
import pytest

from arbor4d.synthgen import (
    GrowthSpec,
    gen_tree,
    gen_tree4d,
    parse_spec,
    random_diffeo,
    serialize_spec,
    warp_tree4d,
)
from arbor4d.treemodel import serialize_sequence, serialize_tree


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            GrowthSpec(depth=0)
        with pytest.raises(ValueError):
            GrowthSpec(depth=7)
        with pytest.raises(ValueError):
            GrowthSpec(branch_length=(0.0, 1.0))
        with pytest.raises(ValueError):
            GrowthSpec(frames=1)

    def test_serialization_round_trip(self):
        spec = GrowthSpec(depth=4, children=(1, 2), frames=5, births=1, seed=9)
        assert parse_spec(serialize_spec(spec)) == spec


class TestGenTree:
    def test_depth_one_single_branch(self):
        t = gen_tree(GrowthSpec(depth=1, seed=0))
        assert t.branch_count() == 1

    def test_deterministic(self):
        spec = GrowthSpec(depth=3, seed=5)
        assert serialize_tree(gen_tree(spec)) == serialize_tree(gen_tree(spec))

    def test_branch_count_bounds(self):
        # depth 3 with 2-3 children per level: between 7 and 13 branches
        for seed in range(10):
            t = gen_tree(GrowthSpec(depth=3, children=(2, 3), seed=seed))
            assert 7 <= t.branch_count() <= 13

    def test_valid_trees(self):
        for seed in range(5):
            t = gen_tree(GrowthSpec(depth=3, seed=seed), samples=40)
            for _, b in t.iter_branches():
                assert np.all(b.radii >= 0.0)
                assert b.n == 40
            assert t.depth() <= 3


class TestGenTree4d:
    def test_zero_growth_constant(self):
        seq = gen_tree4d(GrowthSpec(depth=2, frames=5, growth=0.0, seed=2))
        ref = serialize_tree(seq.frames[0])
        assert all(serialize_tree(f) == ref for f in seq.frames[1:])

    def test_total_length_monotone(self):
        for seed in range(4):
            seq = gen_tree4d(GrowthSpec(depth=2, frames=6, growth=1.2, seed=seed), samples=40)
            lengths = [f.total_length() for f in seq.frames]
            assert all(b >= a - 1e-12 for a, b in zip(lengths, lengths[1:]))

    def test_birth_schedule(self):
        spec = GrowthSpec(depth=2, children=(2, 2), frames=5, seed=1, birth_schedule=(("0/1", 3),))
        seq = gen_tree4d(spec, samples=30)
        counts = [f.branch_count() for f in seq.frames]
        assert counts[:3] == [2, 2, 2]
        assert counts[3:] == [3, 3]

    def test_random_births_deterministic(self):
        spec = GrowthSpec(depth=2, children=(2, 3), frames=6, births=1, seed=4)
        assert serialize_sequence(gen_tree4d(spec)) == serialize_sequence(gen_tree4d(spec))


class TestRandomDiffeo:
    def test_endpoints_fixed(self):
        for seed in range(5):
            g = random_diffeo(seed, 0.7)
            assert g.values[0] == 0.0 and g.values[-1] == 1.0
            assert np.all(np.diff(g.values) > 0.0)

    def test_roughness_controls_deviation(self):
        sup = {}
        for rough in (0.02, 0.5):
            devs = [
                np.max(np.abs(random_diffeo(seed, rough).values - random_diffeo(seed, rough).grid))
                for seed in range(10)
            ]
            sup[rough] = np.mean(devs)
        assert sup[0.02] < 0.25 * sup[0.5]
        assert sup[0.02] < 0.02

    def test_rejects_bad_roughness(self):
        with pytest.raises(ValueError):
            random_diffeo(0, 0.0)
        with pytest.raises(ValueError):
            random_diffeo(0, 1.5)


class TestWarpTree4d:
    def test_warp_then_inverse_round_trip(self):
        seq = gen_tree4d(GrowthSpec(depth=2, frames=8, seed=3), samples=30)
        g = random_diffeo(5, 0.4)
        back = warp_tree4d(warp_tree4d(seq, g), g.inverse())
        scale = max(f.total_length() for f in seq.frames)
        for a, b in zip(seq.frames, back.frames):
            for (_, ba), (_, bb) in zip(a.iter_branches(), b.iter_branches()):
                assert np.max(np.abs(ba.samples - bb.samples)) < 0.02 * scale

    def test_identity_warp_preserves(self):
        from arbor4d.warps import Diffeo

        seq = gen_tree4d(GrowthSpec(depth=2, frames=5, seed=3), samples=30)
        out = warp_tree4d(seq, Diffeo.identity(20))
        assert serialize_sequence(out) == serialize_sequence(seq)

    def test_birth_sequences_blend(self):
        spec = GrowthSpec(depth=2, children=(2, 2), frames=6, seed=1, birth_schedule=(("0/0", 3),))
        seq = gen_tree4d(spec, samples=30)
        g = random_diffeo(2, 0.5)
        out = warp_tree4d(seq, g)
        assert out.n_frames == seq.n_frames
        for f in out.frames:
            for _, b in f.iter_branches():
                assert np.all(np.isfinite(b.samples))
