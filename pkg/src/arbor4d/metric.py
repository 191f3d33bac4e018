"""Elastic tree distance for a fixed alignment, and straight-line geodesics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .esrvf import EsrvfBranch, EsrvfTree, apply_reparam, apply_rotation, check_rotation
from .warps import Diffeo


@dataclass(frozen=True)
class MetricWeights:
    """Relative costs of deforming main branches, subtrees, and junctions."""

    lambda_m: float = 1.0
    lambda_s: float = 1.0
    lambda_p: float = 0.5
    w_rad: float = 1.0

    def __post_init__(self) -> None:
        vals = (self.lambda_m, self.lambda_s, self.lambda_p, self.w_rad)
        if any(v < 0.0 for v in vals):
            raise ValueError("metric weights must be nonnegative")
        if self.lambda_m + self.lambda_s + self.lambda_p == 0.0:
            raise ValueError("at least one lambda must be positive")


@dataclass(frozen=True, eq=False)
class Matching:
    """Partial correspondence between two child lists.

    ``pairs`` holds (index in tree 1, index in tree 2); leftover indices go
    to ``unmatched1`` / ``unmatched2`` and carry null-match cost.
    """

    pairs: tuple[tuple[int, int], ...] = ()
    unmatched1: tuple[int, ...] = ()
    unmatched2: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        side1 = [i for i, _ in self.pairs] + list(self.unmatched1)
        side2 = [j for _, j in self.pairs] + list(self.unmatched2)
        if len(set(side1)) != len(side1) or len(set(side2)) != len(side2):
            raise ValueError("a child index may appear at most once in a matching")

    def partner_of_2(self, j: int) -> int | None:
        for i, jj in self.pairs:
            if jj == j:
                return i
        return None

    def partner_of_1(self, i: int) -> int | None:
        for ii, j in self.pairs:
            if ii == i:
                return j
        return None


@dataclass(frozen=True, eq=False)
class NodeMap:
    """Warp and child matching for one branch; congruent with tree 2."""

    warp: Diffeo
    matching: Matching
    children: tuple["NodeMap", ...] = ()


@dataclass(frozen=True, eq=False)
class RegistrationMap:
    """One global rotation plus per-branch warps and matchings."""

    rotation: np.ndarray
    root: NodeMap

    def __post_init__(self) -> None:
        rot = check_rotation(self.rotation).copy()
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)


def identity_node_map(q: EsrvfTree, m: int) -> NodeMap:
    """Identity warps, nothing matched (used for wholly unmatched subtrees)."""
    kids = tuple(identity_node_map(sub, m) for _, sub in q.children)
    matching = Matching((), (), tuple(range(len(q.children))))
    return NodeMap(Diffeo.identity(m), matching, kids)


def positional_map(q1: EsrvfTree, q2: EsrvfTree, m: int) -> RegistrationMap:
    """Identity rotation and warps; children paired by position."""
    return RegistrationMap(np.eye(3), _positional_node(q1, q2, m))


def _positional_node(n1: EsrvfTree, n2: EsrvfTree, m: int) -> NodeMap:
    k1, k2 = len(n1.children), len(n2.children)
    k = min(k1, k2)
    pairs = tuple((i, i) for i in range(k))
    matching = Matching(pairs, tuple(range(k, k1)), tuple(range(k, k2)))
    kids = []
    for j, (_, sub2) in enumerate(n2.children):
        if j < k:
            kids.append(_positional_node(n1.children[j][1], sub2, m))
        else:
            kids.append(identity_node_map(sub2, m))
    return NodeMap(Diffeo.identity(m), matching, tuple(kids))


# ---------------------------------------------------------------------------
# Distances


def branch_dist_sq(q1: EsrvfBranch, q2: EsrvfBranch, w_rad: float = 1.0) -> float:
    """Trapezoidal integral of ||v1 - v2||^2 + w_rad * (rad1 - rad2)^2."""
    if q1.n != q2.n:
        raise ValueError(f"sample counts differ: {q1.n} vs {q2.n}")
    h = 1.0 / (q1.n - 1)
    dv = q1.v - q2.v
    integrand = np.einsum("ij,ij->i", dv, dv) + w_rad * (q1.rad - q2.rad) ** 2
    return float(np.trapezoid(integrand, dx=h))


def branch_normsq(q: EsrvfBranch, w_rad: float = 1.0) -> float:
    h = 1.0 / (q.n - 1)
    integrand = np.einsum("ij,ij->i", q.v, q.v) + w_rad * q.rad**2
    return float(np.trapezoid(integrand, dx=h))


def subtree_normsq(q: EsrvfTree, w: MetricWeights) -> float:
    """Squared distance to the empty tree (branch creation/annihilation cost)."""
    total = w.lambda_m * branch_normsq(q.main, w.w_rad)
    for _, sub in q.children:
        total += w.lambda_s * subtree_normsq(sub, w)
    return total


def nearest_slot(s: float, candidates: np.ndarray) -> float:
    """Coordinate of the matched slot closest to ``s`` (or ``s`` if none)."""
    if candidates.size == 0:
        return float(s)
    return float(candidates[np.argmin(np.abs(candidates - s))])


# ---------------------------------------------------------------------------
# Applying a registration map


def apply_map(q2: EsrvfTree, reg: RegistrationMap) -> EsrvfTree:
    """Rotate, warp, and slide ``q2`` per the registration map.

    Child bifurcation parameters move to g^{-1}(s) when the parent branch is
    reparameterized by g; the tree's own child order is preserved.
    """
    rotated = apply_rotation(q2, reg.rotation)
    return _apply_node(rotated, reg.root)


def _apply_node(node: EsrvfTree, nm: NodeMap) -> EsrvfTree:
    if len(nm.children) != len(node.children):
        raise ValueError("registration map does not match tree structure")
    main = node.main if nm.warp.is_identity() else apply_reparam(node.main, nm.warp)
    kids = []
    for j, (s, sub) in enumerate(node.children):
        s_new = float(nm.warp.inverse_at(s))
        kids.append((s_new, _apply_node(sub, nm.children[j])))
    return EsrvfTree(main, tuple(kids))


# ---------------------------------------------------------------------------
# Topology completion: make an aligned pair congruent by inserting nulls


def null_like(q: EsrvfTree) -> EsrvfTree:
    """Zero-velocity, zero-radius copy preserving structure and s values."""
    n = q.main.n
    branch = EsrvfBranch(np.zeros((n, 3)), np.zeros(n), np.zeros(3))
    kids = tuple((s, null_like(sub)) for s, sub in q.children)
    return EsrvfTree(branch, kids)


def complete_pair(q1: EsrvfTree, q2_applied: EsrvfTree, nm: NodeMap) -> tuple[EsrvfTree, EsrvfTree]:
    """Insert null branches so both trees share one topology.

    ``q2_applied`` must already carry the map (see :func:`apply_map`).
    Children of the merged trees appear as matched pairs first (by tree-1
    index), then tree-1-only slots, then tree-2-only slots; an unmatched
    subtree faces a null copy placed at the nearest matched junction on the
    opposite side.
    """
    return _complete(q1, q2_applied, nm)


def _complete(n1: EsrvfTree, n2: EsrvfTree, nm: NodeMap) -> tuple[EsrvfTree, EsrvfTree]:
    pairs = sorted(nm.matching.pairs)
    s1_matched = np.array([n1.children[i][0] for i, _ in pairs])
    s2_matched = np.array([n2.children[j][0] for _, j in pairs])
    kids1: list[tuple[float, EsrvfTree]] = []
    kids2: list[tuple[float, EsrvfTree]] = []
    for i, j in pairs:
        c1, c2 = _complete(n1.children[i][1], n2.children[j][1], nm.children[j])
        kids1.append((n1.children[i][0], c1))
        kids2.append((n2.children[j][0], c2))
    for i in sorted(nm.matching.unmatched1):
        s1, sub1 = n1.children[i]
        kids1.append((s1, sub1))
        kids2.append((nearest_slot(s1, s2_matched), null_like(sub1)))
    for j in sorted(nm.matching.unmatched2):
        s2, sub2 = n2.children[j]
        kids1.append((nearest_slot(s2, s1_matched), null_like(sub2)))
        kids2.append((s2, sub2))
    return EsrvfTree(n1.main, tuple(kids1)), EsrvfTree(n2.main, tuple(kids2))


def congruent(q1: EsrvfTree, q2: EsrvfTree) -> bool:
    if len(q1.children) != len(q2.children) or q1.main.n != q2.main.n:
        return False
    return all(congruent(a, b) for (_, a), (_, b) in zip(q1.children, q2.children))


def tree_dist_sq_congruent(q1: EsrvfTree, q2: EsrvfTree, w: MetricWeights) -> float:
    """Recursive weighted distance between trees sharing one topology."""
    if len(q1.children) != len(q2.children):
        raise ValueError("trees are not congruent")
    total = w.lambda_m * branch_dist_sq(q1.main, q2.main, w.w_rad)
    for (s1, sub1), (s2, sub2) in zip(q1.children, q2.children):
        total += w.lambda_p * (s1 - s2) ** 2
        total += w.lambda_s * tree_dist_sq_congruent(sub1, sub2, w)
    return total


def tree_dist_sq_aligned(q1: EsrvfTree, q2: EsrvfTree, reg: RegistrationMap, w: MetricWeights) -> float:
    """Apply ``reg`` to ``q2``, complete topologies, and evaluate the metric."""
    q2a = apply_map(q2, reg)
    c1, c2 = complete_pair(q1, q2a, reg.root)
    return tree_dist_sq_congruent(c1, c2, w)


# ---------------------------------------------------------------------------
# Geodesics


def _lerp_tree(q1: EsrvfTree, q2: EsrvfTree, tau: float) -> EsrvfTree:
    b1, b2 = q1.main, q2.main
    branch = EsrvfBranch(
        (1.0 - tau) * b1.v + tau * b2.v,
        (1.0 - tau) * b1.rad + tau * b2.rad,
        (1.0 - tau) * b1.origin + tau * b2.origin,
    )
    kids = []
    for (s1, sub1), (s2, sub2) in zip(q1.children, q2.children):
        kids.append(((1.0 - tau) * s1 + tau * s2, _lerp_tree(sub1, sub2, tau)))
    return EsrvfTree(branch, tuple(kids))


def geodesic(q1: EsrvfTree, q2_aligned: EsrvfTree, steps: int) -> list[EsrvfTree]:
    """Straight-line path between congruent trees; endpoints are exact."""
    if steps < 2:
        raise ValueError("need at least two steps")
    if not congruent(q1, q2_aligned):
        raise ValueError("trees are not congruent; complete the pair first")
    path = [q1]
    for j in range(1, steps - 1):
        path.append(_lerp_tree(q1, q2_aligned, j / (steps - 1)))
    path.append(q2_aligned)
    return path


def midpoint(q1: EsrvfTree, q2_aligned: EsrvfTree) -> EsrvfTree:
    if not congruent(q1, q2_aligned):
        raise ValueError("trees are not congruent; complete the pair first")
    return _lerp_tree(q1, q2_aligned, 0.5)
