"""Recursive tree-of-branches data model, serialization, and mesh export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

MAX_TREE_DEPTH = 6

TREE_FORMAT = "arbor4d-tree/1"
SEQ_FORMAT = "arbor4d-seq/1"


class TreeFormatError(ValueError):
    """Raised for malformed or invariant-violating tree documents."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True, eq=False)
class Branch:
    """A sampled branch: skeleton points with a per-point radius.

    ``samples`` is an (n, 4) array of rows (x, y, z, r) understood as a
    polyline parameterized uniformly in arc length over [0, 1].
    """

    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError("branch samples must be an (n, 4) array")
        if arr.shape[0] < 2:
            raise ValueError("a branch needs at least two samples")
        if np.any(arr[:, 3] < 0.0):
            raise ValueError("branch radii must be nonnegative")
        if not np.all(np.isfinite(arr)):
            raise ValueError("branch samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return int(self.samples.shape[0])

    @property
    def points(self) -> np.ndarray:
        return self.samples[:, :3]

    @property
    def radii(self) -> np.ndarray:
        return self.samples[:, 3]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def point_at(self, s: float) -> np.ndarray:
        """Skeleton point at parameter ``s`` by linear interpolation."""
        pos = np.clip(s, 0.0, 1.0) * (self.n - 1)
        i0 = min(int(pos), self.n - 2)
        f = pos - i0
        return (1.0 - f) * self.points[i0] + f * self.points[i0 + 1]


@dataclass(frozen=True, eq=False)
class Tree:
    """A branch plus subtrees attached at bifurcation parameters.

    Children are kept in canonical order (s ascending, main-branch length
    descending on ties) so serialization is deterministic. The root-level
    ``scale_normalized`` flag records whether :func:`normalize_scale` ran.
    """

    main: Branch
    children: tuple[tuple[float, "Tree"], ...] = ()
    scale_normalized: bool = False

    def __post_init__(self) -> None:
        kids = []
        for s, sub in self.children:
            s = float(s)
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"bifurcation parameter {s} outside [0, 1]")
            kids.append((s, sub))
        kids.sort(key=lambda c: (c[0], -c[1].main.length()))
        object.__setattr__(self, "children", tuple(kids))

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(sub.depth() for _, sub in self.children)

    def branch_count(self) -> int:
        return 1 + sum(sub.branch_count() for _, sub in self.children)

    def iter_branches(self) -> Iterator[tuple[str, Branch]]:
        """Depth-first (path, branch) pairs; the root path is "0"."""
        yield from _iter_branches(self, "0")

    def total_length(self) -> float:
        return sum(b.length() for _, b in self.iter_branches())


def _iter_branches(tree: Tree, path: str) -> Iterator[tuple[str, Branch]]:
    yield path, tree.main
    for idx, (_, sub) in enumerate(tree.children):
        yield from _iter_branches(sub, f"{path}/{idx}")


@dataclass(frozen=True, eq=False)
class Tree4D:
    """A time-indexed sequence of trees; timestamps normalized onto [0, 1]."""

    times: np.ndarray
    frames: tuple[Tree, ...] = field(default=())

    def __post_init__(self) -> None:
        t = np.array(self.times, dtype=np.float64)
        frames = tuple(self.frames)
        if t.ndim != 1 or t.size != len(frames) or t.size < 2:
            raise ValueError("need matching times and frames with at least two entries")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        t = (t - t[0]) / (t[-1] - t[0])
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# Serialization (arbor4d-tree/1 and arbor4d-seq/1)


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise TreeFormatError(path, message)


def _parse_node(obj, path: str, depth: int, max_depth: int) -> Tree:
    _require(isinstance(obj, dict), path, "node must be an object")
    _require(depth <= max_depth, path, f"tree deeper than {max_depth} layers")
    samples = obj.get("samples")
    _require(isinstance(samples, list) and len(samples) >= 2, f"{path}.samples", "need a list of at least two samples")
    rows = []
    for i, row in enumerate(samples):
        _require(
            isinstance(row, list) and len(row) == 4 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row),
            f"{path}.samples[{i}]",
            "sample must be [x, y, z, r] numbers",
        )
        _require(row[3] >= 0.0, f"{path}.samples[{i}]", "radius must be nonnegative")
        rows.append([float(v) for v in row])
    children = []
    raw_children = obj.get("children", [])
    _require(isinstance(raw_children, list), f"{path}.children", "children must be a list")
    for i, child in enumerate(raw_children):
        cpath = f"{path}.children[{i}]"
        _require(isinstance(child, dict), cpath, "child must be an object")
        s = child.get("s")
        _require(isinstance(s, (int, float)) and not isinstance(s, bool), f"{cpath}.s", "s must be a number")
        _require(0.0 <= s <= 1.0, f"{cpath}.s", f"s={s} outside [0, 1]")
        sub = _parse_node(child.get("subtree"), f"{cpath}.subtree", depth + 1, max_depth)
        children.append((float(s), sub))
    try:
        return Tree(Branch(np.array(rows)), tuple(children))
    except ValueError as exc:
        raise TreeFormatError(path, str(exc)) from exc


def parse_tree(data: bytes | str, *, max_depth: int = MAX_TREE_DEPTH) -> Tree:
    """Parse an arbor4d-tree/1 document. Resampling is not applied."""
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TreeFormatError("$", f"invalid JSON: {exc}") from exc
    _require(isinstance(obj, dict), "$", "document must be an object")
    _require(obj.get("format") == TREE_FORMAT, "$.format", f"expected {TREE_FORMAT!r}")
    tree = _parse_node(obj.get("root"), "root", 1, max_depth)
    if obj.get("scale_normalized", False):
        tree = Tree(tree.main, tree.children, scale_normalized=True)
    return tree


def _node_payload(tree: Tree) -> dict:
    return {
        "samples": [[float(v) for v in row] for row in tree.main.samples],
        "children": [{"s": float(s), "subtree": _node_payload(sub)} for s, sub in tree.children],
    }


def serialize_tree(tree: Tree) -> bytes:
    """Canonical arbor4d-tree/1 bytes (compact JSON, sorted children)."""
    doc = {
        "format": TREE_FORMAT,
        "scale_normalized": bool(tree.scale_normalized),
        "root": _node_payload(tree),
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def parse_sequence(data: bytes | str, *, max_depth: int = MAX_TREE_DEPTH) -> Tree4D:
    """Parse an arbor4d-seq/1 document; timestamps are normalized to [0, 1]."""
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TreeFormatError("$", f"invalid JSON: {exc}") from exc
    _require(isinstance(obj, dict), "$", "document must be an object")
    _require(obj.get("format") == SEQ_FORMAT, "$.format", f"expected {SEQ_FORMAT!r}")
    times = obj.get("times")
    frames = obj.get("frames")
    _require(isinstance(times, list) and len(times) >= 2, "$.times", "need at least two timestamps")
    _require(isinstance(frames, list) and len(frames) == len(times), "$.frames", "frames must match times")
    trees = [_parse_node(node, f"frames[{i}]", 1, max_depth) for i, node in enumerate(frames)]
    try:
        return Tree4D(np.array([float(t) for t in times]), tuple(trees))
    except ValueError as exc:
        raise TreeFormatError("$.times", str(exc)) from exc


def serialize_sequence(seq: Tree4D) -> bytes:
    doc = {
        "format": SEQ_FORMAT,
        "times": [float(t) for t in seq.times],
        "frames": [_node_payload(frame) for frame in seq.frames],
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


# ---------------------------------------------------------------------------
# Resampling and normalization


def resample_branch(branch: Branch, n: int) -> Branch:
    """Resample to ``n`` points uniformly spaced in cumulative arc length.

    Radii are interpolated at the same parameters; endpoints are preserved
    exactly. A zero-length branch degenerates to n copies of its first sample.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    pts = branch.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        return Branch(np.tile(branch.samples[0], (n, 1)))
    target = np.linspace(0.0, total, n)
    cols = [np.interp(target, cum, branch.samples[:, d]) for d in range(4)]
    out = np.stack(cols, axis=1)
    out[0] = branch.samples[0]
    out[-1] = branch.samples[-1]
    return Branch(out)


def resample_tree(tree: Tree, n: int) -> Tree:
    children = tuple((s, resample_tree(sub, n)) for s, sub in tree.children)
    return Tree(resample_branch(tree.main, n), children, tree.scale_normalized)


def _shift(tree: Tree, offset: np.ndarray) -> Tree:
    samples = tree.main.samples.copy()
    samples[:, :3] += offset
    children = tuple((s, _shift(sub, offset)) for s, sub in tree.children)
    return Tree(Branch(samples), children, tree.scale_normalized)


def normalize_translation(tree: Tree) -> Tree:
    """Translate the tree so the main branch starts at the origin."""
    start = tree.main.points[0]
    if np.all(start == 0.0):
        return tree
    return _shift(tree, -start)


def _scale(tree: Tree, factor: float) -> Tree:
    children = tuple((s, _scale(sub, factor)) for s, sub in tree.children)
    return Tree(Branch(tree.main.samples * factor), children, scale_normalized=True)


def normalize_scale(tree: Tree) -> tuple[Tree, float]:
    """Scale so the summed branch arc length is 1; returns the factor applied."""
    total = tree.total_length()
    if total <= 0.0:
        raise ValueError("cannot scale-normalize a zero-length tree")
    factor = 1.0 / total
    return _scale(tree, factor), factor


def normalize_sequence(seq: Tree4D, *, scale: bool = False) -> Tree4D:
    frames = []
    for frame in seq.frames:
        frame = normalize_translation(frame)
        if scale:
            frame, _ = normalize_scale(frame)
        frames.append(frame)
    return Tree4D(seq.times, tuple(frames))


def resample_sequence(seq: Tree4D, n: int) -> Tree4D:
    return Tree4D(seq.times, tuple(resample_tree(f, n) for f in seq.frames))


# ---------------------------------------------------------------------------
# Mesh export


def _branch_frames(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normal/binormal frames along a polyline via projection transport."""
    n = pts.shape[0]
    tangents = np.zeros((n, 3))
    diffs = np.diff(pts, axis=0)
    norms = np.linalg.norm(diffs, axis=1)
    last = np.array([0.0, 0.0, 1.0])
    for i in range(n - 1):
        if norms[i] > 1e-12:
            last = diffs[i] / norms[i]
        tangents[i] = last
    tangents[-1] = last

    normals = np.zeros((n, 3))
    binormals = np.zeros((n, 3))
    ref = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(tangents[0], ref)) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    prev = np.cross(tangents[0], ref)
    prev /= np.linalg.norm(prev)
    for i in range(n):
        cand = prev - np.dot(prev, tangents[i]) * tangents[i]
        norm = np.linalg.norm(cand)
        if norm < 1e-12:
            ref = np.array([1.0, 0.0, 0.0]) if abs(tangents[i][0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            cand = np.cross(tangents[i], ref)
            norm = np.linalg.norm(cand)
        prev = cand / norm
        normals[i] = prev
        binormals[i] = np.cross(tangents[i], prev)
    return normals, binormals


def export_mesh(tree: Tree, segments: int = 16) -> bytes:
    """Sweep circular cross sections along each branch into a Wavefront OBJ.

    One group per branch (``g branch/<dfs-path>``); each non-degenerate
    branch contributes n*segments vertices and (n-1)*segments*2 triangles.
    Branches with zero radius throughout (or zero length) are emitted as
    polyline groups.
    """
    if segments < 3:
        raise ValueError("need at least three segments per ring")
    out: list[str] = []
    offset = 1  # OBJ indices are 1-based and global
    theta = np.arange(segments) * (2.0 * np.pi / segments)
    for path, branch in tree.iter_branches():
        out.append(f"g branch/{path}")
        pts = branch.points
        n = branch.n
        if branch.length() <= 0.0 or np.max(branch.radii) <= 0.0:
            for p in pts:
                out.append(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
            chain = " ".join(str(offset + i) for i in range(n))
            out.append(f"l {chain}")
            offset += n
            continue
        normals, binormals = _branch_frames(pts)
        ring = np.cos(theta)[:, None], np.sin(theta)[:, None]
        for i in range(n):
            verts = pts[i] + branch.radii[i] * (ring[0] * normals[i] + ring[1] * binormals[i])
            for vtx in verts:
                out.append(f"v {float(vtx[0])!r} {float(vtx[1])!r} {float(vtx[2])!r}")
        for i in range(n - 1):
            base = offset + i * segments
            for j in range(segments):
                jn = (j + 1) % segments
                a, b = base + j, base + jn
                c, d = base + segments + j, base + segments + jn
                out.append(f"f {a} {c} {d}")
                out.append(f"f {a} {d} {b}")
        offset += n * segments
    return ("\n".join(out) + "\n").encode("utf-8")
