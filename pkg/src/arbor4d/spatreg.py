"""Joint rotation / reparameterization / matching solver for tree pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .esrvf import EsrvfBranch, EsrvfTree, apply_rotation
from .metric import (
    Matching,
    MetricWeights,
    NodeMap,
    RegistrationMap,
    apply_map,
    identity_node_map,
    nearest_slot,
    positional_map,
    subtree_normsq,
    tree_dist_sq_aligned,
)
from .warps import DEFAULT_STENCIL, Diffeo, optimal_warp

REG_FORMAT = "arbor4d-reg/1"

_TIE_BIAS = 1e-13


@dataclass(frozen=True)
class RegistrationOptions:
    """Solver knobs: DP grid size, outer rounds, stopping, matching mode."""

    grid: int = 100
    rounds: int = 3
    rel_tol: float = 1e-6
    exact_permutation: bool = False
    stencil: tuple[tuple[int, int], ...] = DEFAULT_STENCIL


def _grid_for(q: EsrvfTree, opts: RegistrationOptions) -> int:
    return min(opts.grid, q.main.n)


# ---------------------------------------------------------------------------
# Rotation


def _collect_pairs(n1: EsrvfTree, n2: EsrvfTree, nm: NodeMap | None, out: list) -> None:
    out.append((n1.main, n2.main))
    if nm is None:
        k = min(len(n1.children), len(n2.children))
        for idx in range(k):
            _collect_pairs(n1.children[idx][1], n2.children[idx][1], None, out)
    else:
        for i, j in nm.matching.pairs:
            _collect_pairs(n1.children[i][1], n2.children[j][1], nm.children[j], out)


def optimal_rotation(
    q1: EsrvfTree, q2: EsrvfTree, context: RegistrationMap | None = None
) -> tuple[np.ndarray, bool]:
    """Least-squares rotation aligning matched velocity fields of q2 onto q1.

    Uses the SVD of the trapezoid-weighted 3x3 cross-covariance, with the
    determinant corrected to +1. Branch correspondences come from ``context``
    or default to positional pairing. Returns (rotation, degenerate_flag);
    a cross-covariance of rank < 2 yields the identity with the flag set.
    """
    pairs: list[tuple[EsrvfBranch, EsrvfBranch]] = []
    _collect_pairs(q1, q2, context.root if context is not None else None, pairs)
    cov = np.zeros((3, 3))
    for b1, b2 in pairs:
        if b1.n != b2.n:
            raise ValueError("matched branches have different sample counts")
        h = 1.0 / (b1.n - 1)
        wts = np.full(b1.n, h)
        wts[0] = wts[-1] = 0.5 * h
        cov += (b2.v * wts[:, None]).T @ b1.v
    u, sing, vt = np.linalg.svd(cov)
    if sing[1] <= 1e-12 * max(sing[0], 1.0):
        return np.eye(3), True
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    rot = vt.T @ flip @ u.T
    return rot, False


# ---------------------------------------------------------------------------
# Branch reparameterization and child matching


def optimal_reparam_branch(
    q1: EsrvfBranch,
    q2: EsrvfBranch,
    m: int,
    *,
    w_rad: float = 1.0,
    stencil: tuple[tuple[int, int], ...] = DEFAULT_STENCIL,
) -> tuple[Diffeo, float]:
    """Dynamic-programming warp minimizing the branch distance q1 vs (q2, g)."""
    if q1.n != q2.n:
        raise ValueError("branches must share a sample count")
    if m < 2:
        raise ValueError("warp grid needs at least two knots")
    if m > q1.n:
        raise ValueError("warp grid cannot exceed the sample count")
    return optimal_warp(
        q1.v,
        q2.v,
        m,
        plain1=q1.rad,
        plain2=q2.rad,
        plain_weight=w_rad,
        jacobian=True,
        stencil=stencil,
    )


def match_subtrees(cost: np.ndarray, null1: np.ndarray, null2: np.ndarray) -> Matching:
    """Minimum-cost partial matching with per-child null options.

    Solved as an assignment problem on the (k1 + k2) square augmented matrix;
    a vanishing index-ordered bias makes exact ties resolve to the lowest
    index pairs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    null1 = np.asarray(null1, dtype=np.float64)
    null2 = np.asarray(null2, dtype=np.float64)
    k1, k2 = cost.shape
    if null1.shape != (k1,) or null2.shape != (k2,):
        raise ValueError("null cost vectors must match the cost matrix")
    if k1 == 0 and k2 == 0:
        return Matching()
    finite = np.concatenate([cost.ravel(), null1, null2])
    if not np.all(np.isfinite(finite)) or np.any(finite < 0.0):
        raise ValueError("costs must be finite and nonnegative")
    big = float(finite.sum()) + 1.0
    size = k1 + k2
    aug = np.full((size, size), big)
    aug[:k1, :k2] = cost
    aug[k1:, k2:] = 0.0
    for i in range(k1):
        aug[i, k2 + i] = null1[i]
    for j in range(k2):
        aug[k1 + j, j] = null2[j]
    scale = max(1.0, float(np.max(np.abs(aug))))
    bias = _TIE_BIAS * scale * (
        np.arange(size)[:, None] * (size + 1) + np.arange(size)[None, :]
    ) / (size * (size + 2) + 1.0)
    rows, cols = linear_sum_assignment(aug + bias)
    pairs, un1, un2 = [], [], []
    assigned = dict(zip(rows.tolist(), cols.tolist()))
    for i in range(k1):
        j = assigned[i]
        if j < k2:
            pairs.append((i, j))
        else:
            un1.append(i)
    matched2 = {j for _, j in pairs}
    un2 = [j for j in range(k2) if j not in matched2]
    return Matching(tuple(pairs), tuple(un1), tuple(un2))


# ---------------------------------------------------------------------------
# Pairwise registration


def _register_node(
    n1: EsrvfTree,
    n2: EsrvfTree,
    w: MetricWeights,
    opts: RegistrationOptions,
    memo: dict,
) -> tuple[float, NodeMap]:
    key = (id(n1), id(n2))
    hit = memo.get(key)
    if hit is not None:
        return hit
    m = _grid_for(n1, opts)
    k1, k2 = len(n1.children), len(n2.children)
    sub_cost = np.zeros((k1, k2))
    sub_maps: dict[tuple[int, int], NodeMap] = {}
    hung = np.zeros((k1, k2))
    s1 = n1.child_params()
    s2 = n2.child_params()
    for i in range(k1):
        for j in range(k2):
            c, nm = _register_node(n1.children[i][1], n2.children[j][1], w, opts, memo)
            sub_cost[i, j] = c
            sub_maps[(i, j)] = nm
            hung[i, j] = w.lambda_s * c + w.lambda_p * (s1[i] - s2[j]) ** 2
    null1 = np.array([w.lambda_s * subtree_normsq(sub, w) for _, sub in n1.children])
    null2 = np.array([w.lambda_s * subtree_normsq(sub, w) for _, sub in n2.children])
    if opts.exact_permutation and k1 and k2:
        # Forbid nulls up to the forced count difference.
        forbid = max(float(hung.sum()), 1.0) * 1e6
        null1 = null1 + forbid
        null2 = null2 + forbid
    if k1 or k2:
        matching = match_subtrees(hung, null1, null2)
    else:
        matching = Matching()
    warp, warp_cost = optimal_reparam_branch(
        n1.main, n2.main, m, w_rad=w.w_rad, stencil=opts.stencil
    )

    s2w = warp.inverse_at(s2) if k2 else np.empty(0)
    pairs = sorted(matching.pairs)
    s1m = np.array([s1[i] for i, _ in pairs])
    s2m = np.array([s2w[j] for _, j in pairs])
    cost = w.lambda_m * warp_cost
    for i, j in pairs:
        cost += w.lambda_p * (s1[i] - s2w[j]) ** 2 + w.lambda_s * sub_cost[i, j]
    for i in matching.unmatched1:
        base = null1[i] if not opts.exact_permutation else w.lambda_s * subtree_normsq(n1.children[i][1], w)
        cost += base + w.lambda_p * (s1[i] - nearest_slot(s1[i], s2m)) ** 2
    for j in matching.unmatched2:
        base = null2[j] if not opts.exact_permutation else w.lambda_s * subtree_normsq(n2.children[j][1], w)
        cost += base + w.lambda_p * (s2w[j] - nearest_slot(s2w[j], s1m)) ** 2

    kids = []
    back = {j: i for i, j in matching.pairs}
    for j in range(k2):
        if j in back:
            kids.append(sub_maps[(back[j], j)])
        else:
            kids.append(identity_node_map(n2.children[j][1], m))
    result = (float(cost), NodeMap(warp, matching, tuple(kids)))
    memo[key] = result
    return result


def register_trees(
    q1: EsrvfTree,
    q2: EsrvfTree,
    w: MetricWeights | None = None,
    opts: RegistrationOptions | None = None,
) -> tuple[RegistrationMap, float]:
    """Align ``q2`` onto ``q1`` by block-coordinate descent.

    Each round solves the rotation from current correspondences, then runs a
    bottom-up pass solving child matchings and per-branch warps; a candidate
    map is kept only if the exactly re-evaluated objective decreases, so the
    reported cost never exceeds the unregistered (positional, identity)
    baseline. Returns the best map and the distance (square root of cost).
    """
    w = w or MetricWeights()
    opts = opts or RegistrationOptions()
    m = _grid_for(q1, opts)
    best_map = positional_map(q1, q2, m)
    best_cost = tree_dist_sq_aligned(q1, q2, best_map, w)
    scale = max(subtree_normsq(q1, w), 1e-12)

    def solve(rot: np.ndarray) -> tuple[RegistrationMap, float]:
        q2r = apply_rotation(q2, rot)
        _, root = _register_node(q1, q2r, w, opts, {})
        cand = RegistrationMap(rot, root)
        return cand, tree_dist_sq_aligned(q1, q2, cand, w)

    # The first round is seeded twice: positional correspondences can give a
    # badly wrong rotation when child orders differ or branches are missing,
    # while the identity seed fails on strongly rotated inputs.
    context: RegistrationMap | None = None
    cost: float | None = None
    if best_cost > 1e-20 * scale:
        seed_rot, _ = optimal_rotation(q1, q2, None)
        cand_i, cost_i = solve(np.eye(3))
        context, cost = cand_i, cost_i
        if np.max(np.abs(seed_rot - np.eye(3))) > 1e-12:
            cand_k, cost_k = solve(seed_rot)
            if cost_k < cost_i:
                context, cost = cand_k, cost_k
        if cost < best_cost:
            best_map, best_cost = context, cost

    prev_cost = cost
    for _ in range(1, opts.rounds):
        if best_cost <= 1e-20 * scale:
            break
        rot, _degenerate = optimal_rotation(q1, q2, context)
        cand, cost = solve(rot)
        context = cand
        if cost < best_cost:
            best_map, best_cost = cand, cost
        if prev_cost is not None and abs(prev_cost - cost) <= opts.rel_tol * max(cost, 1e-12):
            break
        prev_cost = cost
    return best_map, float(np.sqrt(max(best_cost, 0.0)))


# ---------------------------------------------------------------------------
# Within-sequence registration with a persistent branch labeling


class _Slot:
    """One branch slot of the union topology with per-frame data."""

    __slots__ = ("children", "data")

    def __init__(self) -> None:
        self.children: list[_Slot] = []
        self.data: dict[int, tuple[EsrvfBranch, float]] = {}

    def ingest(self, node: EsrvfTree, s: float, frame: int) -> None:
        self.data[frame] = (node.main, s)
        while len(self.children) < len(node.children):
            self.children.append(_Slot())
        for idx, (cs, sub) in enumerate(node.children):
            self.children[idx].ingest(sub, cs, frame)


def _ingest_step(slot: _Slot, node: EsrvfTree, s: float, nm: NodeMap, frame: int) -> None:
    """Record frame data on existing slots (matched) and append new ones."""
    slot.data[frame] = (node.main, s)
    for i, j in nm.matching.pairs:
        cs, sub = node.children[j]
        _ingest_step(slot.children[i], sub, cs, nm.children[j], frame)
    for j in nm.matching.unmatched2:
        cs, sub = node.children[j]
        fresh = _Slot()
        fresh.ingest(sub, cs, frame)
        slot.children.append(fresh)


def _materialize(slot: _Slot, frame: int, n: int) -> tuple[EsrvfTree, float]:
    if frame in slot.data:
        branch, s = slot.data[frame]
    else:
        frames = np.array(sorted(slot.data))
        near = int(frames[np.argmin(np.abs(frames - frame))])
        _, s = slot.data[near]
        branch = EsrvfBranch(np.zeros((n, 3)), np.zeros(n), np.zeros(3))
    kids = tuple((cs, sub) for sub, cs in (_materialize(c, frame, n) for c in slot.children))
    return EsrvfTree(branch, kids), s


def _first_frames(slot: _Slot, path: str, out: dict[str, int]) -> None:
    out[path] = min(slot.data)
    for idx, child in enumerate(slot.children):
        _first_frames(child, f"{path}/{idx}", out)


@dataclass(frozen=True, eq=False)
class SequenceRegistration:
    """Co-registered frames on a shared branch labeling."""

    frames: tuple[EsrvfTree, ...]
    maps: tuple[RegistrationMap, ...]
    first_seen: dict[str, int] = field(default_factory=dict)


def register_sequence(
    frames,
    w: MetricWeights | None = None,
    opts: RegistrationOptions | None = None,
) -> SequenceRegistration:
    """Register each frame onto its predecessor and compose a shared labeling.

    ``frames`` is a Tree4D or a list of EsrvfTree. Frame t+1 is registered
    onto the (already registered, union-padded) frame t; branches absent in
    a frame appear as null branches at the junction of their nearest
    populated frame, so every output frame shares the topology of frame 0
    extended by later births.
    """
    from .treemodel import Tree4D

    if isinstance(frames, Tree4D):
        from .esrvf import tree_forward

        qs = [tree_forward(f) for f in frames.frames]
    else:
        qs = list(frames)
    if not qs:
        raise ValueError("empty sequence")
    w = w or MetricWeights()
    opts = opts or RegistrationOptions()
    n = qs[0].main.n

    root = _Slot()
    root.ingest(qs[0], 0.0, 0)
    maps: list[RegistrationMap] = []
    prev, _ = _materialize(root, 0, n)
    for t in range(1, len(qs)):
        reg, _ = register_trees(prev, qs[t], w, opts)
        aligned = apply_map(qs[t], reg)
        _ingest_step(root, aligned, 0.0, reg.root, t)
        maps.append(reg)
        prev, _ = _materialize(root, t, n)

    out = tuple(_materialize(root, t, n)[0] for t in range(len(qs)))
    first: dict[str, int] = {}
    _first_frames(root, "0", first)
    return SequenceRegistration(out, tuple(maps), first)


# ---------------------------------------------------------------------------
# Registration-map serialization (arbor4d-reg/1)


def _node_payload(nm: NodeMap) -> dict:
    return {
        "warp": [float(v) for v in nm.warp.values],
        "matching": {
            "pairs": [[int(i), int(j)] for i, j in nm.matching.pairs],
            "unmatched1": [int(i) for i in nm.matching.unmatched1],
            "unmatched2": [int(j) for j in nm.matching.unmatched2],
        },
        "children": [_node_payload(c) for c in nm.children],
    }


def serialize_registration(reg: RegistrationMap) -> bytes:
    doc = {
        "format": REG_FORMAT,
        "rotation": [[float(v) for v in row] for row in reg.rotation],
        "root": _node_payload(reg.root),
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _parse_node_map(obj: dict) -> NodeMap:
    matching = Matching(
        tuple((int(i), int(j)) for i, j in obj["matching"]["pairs"]),
        tuple(int(i) for i in obj["matching"]["unmatched1"]),
        tuple(int(j) for j in obj["matching"]["unmatched2"]),
    )
    children = tuple(_parse_node_map(c) for c in obj["children"])
    return NodeMap(Diffeo(np.array(obj["warp"], dtype=np.float64)), matching, children)


def parse_registration(data: bytes | str) -> RegistrationMap:
    obj = json.loads(data)
    if obj.get("format") != REG_FORMAT:
        raise ValueError(f"expected {REG_FORMAT!r} document")
    rotation = np.array(obj["rotation"], dtype=np.float64)
    return RegistrationMap(rotation, _parse_node_map(obj["root"]))
