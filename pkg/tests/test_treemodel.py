import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbor4d.treemodel import (
    Branch,
    Tree,
    Tree4D,
    TreeFormatError,
    export_mesh,
    normalize_scale,
    normalize_translation,
    parse_sequence,
    parse_tree,
    resample_branch,
    serialize_sequence,
    serialize_tree,
)

from conftest import attached_tree, smooth_branch


def line_branch(length=1.0, n=5, r=0.1):
    t = np.linspace(0.0, length, n)
    return Branch(np.column_stack([t, np.zeros(n), np.zeros(n), np.full(n, r)]))


class TestBranch:
    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            Branch(np.array([[0.0, 0.0, 0.0, 0.1]]))

    def test_rejects_negative_radius(self):
        with pytest.raises(ValueError):
            Branch(np.array([[0, 0, 0, 0.1], [1, 0, 0, -0.1]]))

    def test_immutable(self):
        b = line_branch()
        with pytest.raises(ValueError):
            b.samples[0, 0] = 5.0


class TestResample:
    def test_straight_segment_positions(self):
        b = line_branch(1.0, 2)
        out = resample_branch(b, 5)
        assert np.allclose(out.points[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_already_uniform_identity(self):
        b = line_branch(2.0, 7)
        out = resample_branch(b, 7)
        assert np.allclose(out.samples, b.samples)

    def test_nonuniform_spacing_becomes_uniform(self, rng):
        # Oracle: locate each output point on the input's cumulative arc
        # length (x is monotone here) and check uniform spacing.
        raw = np.cumsum(rng.uniform(0.1, 2.0, size=40))
        pts = np.column_stack([raw, np.sin(raw), np.zeros(40), np.full(40, 0.05)])
        out = resample_branch(Branch(pts), 25)
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts[:, :3], axis=0), axis=1))])
        pos = np.interp(out.points[:, 0], pts[:, 0], cum)
        total = cum[-1]
        assert np.max(np.abs(np.diff(pos) - total / 24)) < 1e-9 * max(total, 1.0)

    def test_smooth_input_chords_near_uniform(self, rng):
        b = smooth_branch(rng, n=120)
        out = resample_branch(b, 60)
        seg = np.linalg.norm(np.diff(out.points, axis=0), axis=1)
        assert np.max(np.abs(seg - seg.mean())) < 0.01 * seg.mean()

    def test_endpoints_exact(self, rng):
        b = smooth_branch(rng)
        out = resample_branch(b, 33)
        assert np.array_equal(out.samples[0], b.samples[0])
        assert np.array_equal(out.samples[-1], b.samples[-1])

    def test_arclength_preserved_on_smooth(self, rng):
        b = smooth_branch(rng, n=200)
        out = resample_branch(b, 50)
        assert abs(out.length() - b.length()) < 0.005 * b.length()

    def test_zero_length_degenerates(self):
        b = Branch(np.array([[1.0, 2.0, 3.0, 0.4], [1.0, 2.0, 3.0, 0.4]]))
        out = resample_branch(b, 6)
        assert out.n == 6
        assert np.allclose(out.points, [1.0, 2.0, 3.0])
        assert np.allclose(out.radii, 0.4)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            resample_branch(line_branch(), 1)


class TestNormalize:
    def test_translation_moves_root_to_origin(self, rng):
        t = attached_tree(rng, start=(5.0, -2.0, 3.0))
        out = normalize_translation(t)
        assert np.allclose(out.main.points[0], 0.0)

    def test_translation_matches_unshifted(self, rng):
        t = attached_tree(rng)
        shifted = Tree(
            Branch(t.main.samples + np.array([5.0, -2.0, 3.0, 0.0])),
            tuple((s, _shift_tree(sub, np.array([5.0, -2.0, 3.0]))) for s, sub in t.children),
        )
        a = normalize_translation(t)
        b = normalize_translation(shifted)
        for (_, ba), (_, bb) in zip(a.iter_branches(), b.iter_branches()):
            assert np.allclose(ba.samples, bb.samples, atol=1e-12)

    def test_scale_factor(self):
        t = Tree(line_branch(4.0, 9))
        out, factor = normalize_scale(t)
        assert factor == pytest.approx(0.25)
        assert out.total_length() == pytest.approx(1.0)

    def test_unit_tree_unchanged(self):
        t = Tree(line_branch(1.0, 9))
        out, factor = normalize_scale(t)
        assert factor == pytest.approx(1.0)
        assert np.allclose(out.main.samples, t.main.samples)

    def test_scale_idempotent(self, rng):
        t = attached_tree(rng)
        once, _ = normalize_scale(t)
        twice, factor2 = normalize_scale(once)
        assert factor2 == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(once.main.samples, twice.main.samples)

    def test_translation_idempotent_and_commutes(self, rng):
        t = attached_tree(rng, start=(2.0, 1.0, -1.0))
        a = normalize_translation(normalize_translation(t))
        b = normalize_translation(t)
        assert np.allclose(a.main.samples, b.main.samples)
        ts, _ = normalize_scale(normalize_translation(t))
        st_, _ = normalize_scale(t)
        st_ = normalize_translation(st_)
        for (_, ba), (_, bb) in zip(ts.iter_branches(), st_.iter_branches()):
            assert np.allclose(ba.samples, bb.samples, atol=1e-12)

    def test_zero_length_rejected(self):
        t = Tree(Branch(np.array([[0, 0, 0, 0.1], [0, 0, 0, 0.1]])))
        with pytest.raises(ValueError):
            normalize_scale(t)


def _shift_tree(t: Tree, offset) -> Tree:
    return Tree(
        Branch(t.main.samples + np.append(offset, 0.0)),
        tuple((s, _shift_tree(sub, offset)) for s, sub in t.children),
    )


class TestSerialization:
    def test_single_branch_document(self):
        doc = {
            "format": "arbor4d-tree/1",
            "scale_normalized": False,
            "root": {"samples": [[0, 0, 0, 0.1], [1, 0, 0, 0.1]], "children": []},
        }
        t = parse_tree(json.dumps(doc))
        assert t.children == ()
        assert t.main.n == 2

    def test_out_of_range_s_names_path(self):
        doc = {
            "format": "arbor4d-tree/1",
            "root": {
                "samples": [[0, 0, 0, 0.1], [1, 0, 0, 0.1]],
                "children": [
                    {"s": 1.2, "subtree": {"samples": [[0, 0, 0, 0.1], [1, 0, 0, 0.1]], "children": []}}
                ],
            },
        }
        with pytest.raises(TreeFormatError) as err:
            parse_tree(json.dumps(doc))
        assert "root.children[0].s" in str(err.value)

    def test_negative_radius_reported(self):
        doc = {
            "format": "arbor4d-tree/1",
            "root": {"samples": [[0, 0, 0, 0.1], [1, 0, 0, -0.2]], "children": []},
        }
        with pytest.raises(TreeFormatError) as err:
            parse_tree(json.dumps(doc))
        assert "samples[1]" in str(err.value)

    def test_round_trip_random_trees(self, rng):
        for _ in range(10):
            t = attached_tree(rng, depth=3, n=8)
            data = serialize_tree(t)
            again = serialize_tree(parse_tree(data))
            assert data == again

    def test_noncanonical_document_canonicalized(self):
        # unordered children and loose whitespace collapse to canonical form
        leaf = {"samples": [[0, 0, 0, 0.1], [0.5, 0, 0, 0.1]], "children": []}
        messy = {
            "format": "arbor4d-tree/1",
            "root": {
                "samples": [[0, 0, 0, 0.2], [1, 0, 0, 0.2]],
                "children": [
                    {"s": 0.8, "subtree": leaf},
                    {"s": 0.2, "subtree": leaf},
                ],
            },
        }
        parsed = parse_tree(json.dumps(messy, indent=2))
        assert [s for s, _ in parsed.children] == [0.2, 0.8]
        canonical = serialize_tree(parsed)
        assert serialize_tree(parse_tree(canonical)) == canonical
        assert b"\n" not in canonical

    def test_sequence_round_trip_and_time_normalization(self, rng):
        frames = tuple(attached_tree(rng, n=6) for _ in range(3))
        seq = Tree4D(np.array([2.0, 3.0, 7.0]), frames)
        assert seq.times[0] == 0.0 and seq.times[-1] == 1.0
        data = serialize_sequence(seq)
        again = parse_sequence(data)
        assert serialize_sequence(again) == data

    def test_bad_json(self):
        with pytest.raises(TreeFormatError):
            parse_tree(b"{not json")

    def test_wrong_format_field(self):
        with pytest.raises(TreeFormatError):
            parse_tree(json.dumps({"format": "other", "root": {}}))

    def test_depth_limit(self):
        node = {"samples": [[0, 0, 0, 0.1], [1, 0, 0, 0.1]], "children": []}
        for _ in range(7):
            node = {
                "samples": [[0, 0, 0, 0.1], [1, 0, 0, 0.1]],
                "children": [{"s": 0.5, "subtree": node}],
            }
        with pytest.raises(TreeFormatError):
            parse_tree(json.dumps({"format": "arbor4d-tree/1", "root": node}))


@settings(max_examples=25, deadline=None)
@given(
    xs=st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=6),
    radius=st.floats(0, 3, allow_nan=False),
)
def test_serialize_parse_identity_property(xs, radius):
    pts = np.column_stack([xs, np.zeros(len(xs)), np.arange(len(xs), dtype=float), np.full(len(xs), radius)])
    t = Tree(Branch(pts))
    data = serialize_tree(t)
    assert serialize_tree(parse_tree(data)) == data


class TestMesh:
    def test_triangle_count_single_branch(self):
        t = Tree(line_branch(1.0, 10))
        obj = export_mesh(t, segments=4).decode()
        faces = [line for line in obj.splitlines() if line.startswith("f ")]
        assert len(faces) == 4 * (10 - 1) * 2

    def test_vertex_count(self, rng):
        t = attached_tree(rng, depth=2, n=12)
        obj = export_mesh(t, segments=5).decode()
        verts = [line for line in obj.splitlines() if line.startswith("v ")]
        assert len(verts) == t.branch_count() * 12 * 5

    def test_single_group_for_leaf_tree(self):
        t = Tree(line_branch(1.0, 4))
        obj = export_mesh(t, 3).decode()
        groups = [line for line in obj.splitlines() if line.startswith("g ")]
        assert groups == ["g branch/0"]

    def test_zero_radius_branch_becomes_line(self):
        t = Tree(line_branch(1.0, 4, r=0.0))
        obj = export_mesh(t, 6).decode()
        assert any(line.startswith("l ") for line in obj.splitlines())

    def test_rejects_few_segments(self):
        with pytest.raises(ValueError):
            export_mesh(Tree(line_branch()), 2)
