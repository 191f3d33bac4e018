"""Low-dimensional tree-shape subspace: vectorization, Gaussianization, PCA."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .esrvf import EsrvfBranch, EsrvfTree, tree_forward
from .metric import MetricWeights, RegistrationMap, apply_map
from .powertransform import fit_yj_lambdas, yj_forward_matrix, yj_inverse_matrix
from .spatreg import RegistrationOptions, register_trees
from .treemodel import Tree

logger = logging.getLogger(__name__)

BASIS_FORMAT = "arbor4d-basis/1"


@dataclass(frozen=True, eq=False)
class TopologyNode:
    """A branch slot of the shared labeling with its default junction parameter."""

    s: float
    children: tuple["TopologyNode", ...] = ()

    def slot_count(self) -> int:
        return 1 + sum(c.slot_count() for c in self.children)

    def matches(self, q: EsrvfTree) -> bool:
        if len(q.children) != len(self.children):
            return False
        return all(c.matches(sub) for c, (_, sub) in zip(self.children, q.children))


def topology_of(q: EsrvfTree, s: float = 0.0) -> TopologyNode:
    return TopologyNode(s, tuple(topology_of(sub, cs) for cs, sub in q.children))


def vector_length(top: TopologyNode, n: int) -> int:
    return top.slot_count() * 4 * n + (top.slot_count() - 1)


def vectorize(q: EsrvfTree, top: TopologyNode, n: int) -> np.ndarray:
    """Flatten a congruent tree to [v, rad, (s_child, child)...] in slot order."""
    if not top.matches(q):
        raise ValueError("tree is not congruent with the template topology")
    parts: list[np.ndarray] = []
    _vectorize_node(q, parts)
    return np.concatenate(parts)


def _vectorize_node(q: EsrvfTree, parts: list[np.ndarray]) -> None:
    parts.append(q.main.v.ravel())
    parts.append(q.main.rad)
    for s, sub in q.children:
        parts.append(np.array([s]))
        _vectorize_node(sub, parts)


def devectorize(vec: np.ndarray, top: TopologyNode, n: int) -> tuple[EsrvfTree, int]:
    """Rebuild a tree from a flat vector; clamps invalid radii and junction
    parameters and returns how many entries had to be clamped."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (vector_length(top, n),):
        raise ValueError("vector length does not match the template")
    state = {"pos": 0, "clamped": 0}
    tree = _devectorize_node(vec, top, n, state)
    return tree, state["clamped"]


def _devectorize_node(vec: np.ndarray, top: TopologyNode, n: int, state: dict) -> EsrvfTree:
    pos = state["pos"]
    v = vec[pos : pos + 3 * n].reshape(n, 3)
    rad = vec[pos + 3 * n : pos + 4 * n]
    state["pos"] = pos + 4 * n
    bad = rad < 0.0
    if np.any(bad):
        state["clamped"] += int(bad.sum())
        rad = np.where(bad, 0.0, rad)
    kids = []
    for child in top.children:
        s = float(vec[state["pos"]])
        state["pos"] += 1
        if not 0.0 <= s <= 1.0:
            state["clamped"] += 1
            s = min(max(s, 0.0), 1.0)
        kids.append((s, _devectorize_node(vec, child, n, state)))
    return EsrvfTree(EsrvfBranch(v, rad, np.zeros(3)), tuple(kids))


# ---------------------------------------------------------------------------
# Union-of-topologies bookkeeping


class _UnionSlot:
    __slots__ = ("children", "default_s")

    def __init__(self, default_s: float):
        self.default_s = default_s
        self.children: list[_UnionSlot] = []

    @classmethod
    def from_tree(cls, q: EsrvfTree, s: float = 0.0) -> "_UnionSlot":
        slot = cls(s)
        for cs, sub in q.children:
            slot.children.append(cls.from_tree(sub, cs))
        return slot

    def freeze(self) -> TopologyNode:
        return TopologyNode(self.default_s, tuple(c.freeze() for c in self.children))


def _presence_walk(slot, node, nodemap, out, *, extend: bool, dropped: list) -> None:
    """Record which union slots the aligned tree populates.

    ``out`` maps id(slot) -> (branch, s). Tree children unmatched against the
    base topology either extend the union (fit time) or are dropped (projection
    of new trees onto a frozen basis).
    """
    for i, j in nodemap.matching.pairs:
        cs, sub = node.children[j]
        child_slot = slot.children[i]
        out[id(child_slot)] = (sub.main, cs)
        _presence_walk(child_slot, sub, nodemap.children[j], out, extend=extend, dropped=dropped)
    for j in nodemap.matching.unmatched2:
        cs, sub = node.children[j]
        if extend:
            fresh = _UnionSlot.from_tree(sub, cs)
            slot.children.append(fresh)
            _record_all(fresh, sub, cs, out)
        else:
            dropped.append(sub.branch_count())


def _record_all(slot: "_UnionSlot", node: EsrvfTree, s: float, out: dict) -> None:
    out[id(slot)] = (node.main, s)
    for child_slot, (cs, sub) in zip(slot.children, node.children):
        _record_all(child_slot, sub, cs, out)


def _pad_tree(slot: "_UnionSlot", presence: dict, n: int) -> tuple[EsrvfTree, float]:
    if id(slot) in presence:
        branch, s = presence[id(slot)]
    else:
        branch = EsrvfBranch(np.zeros((n, 3)), np.zeros(n), np.zeros(3))
        s = slot.default_s
    kids = tuple((cs, sub) for sub, cs in (_pad_tree(c, presence, n) for c in slot.children))
    return EsrvfTree(branch, kids), s


@dataclass(frozen=True, eq=False)
class TreeShapeBasis:
    """Fitted tree-shape subspace.

    ``mean_vector`` is the sample mean of the transformed training vectors;
    ``reconstruct(0)`` is therefore the basis's mean tree. ``mean_tree``
    stores the iteratively averaged registration target new inputs are
    aligned against before vectorization.
    """

    topology: TopologyNode
    n: int
    mean_tree: EsrvfTree
    mean_vector: np.ndarray
    yj_lambdas: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    k: int
    energy: float
    weights: MetricWeights
    # Coefficients of the training trees under their fit-time alignment;
    # None after deserialization.
    training_coefficients: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(self.mean_vector.size)

    def cumulative_energy(self) -> np.ndarray:
        total = float(self.eigenvalues.sum())
        if total <= 0.0:
            return np.zeros_like(self.eigenvalues)
        return np.cumsum(self.eigenvalues) / total


def _presence_of(
    q: EsrvfTree,
    union: "_UnionSlot",
    mean_tree: EsrvfTree,
    w: MetricWeights,
    opts: RegistrationOptions,
    *,
    extend: bool,
    reg: RegistrationMap | None = None,
) -> dict:
    if reg is None:
        reg, _ = register_trees(mean_tree, q, w, opts)
    aligned = apply_map(q, reg)
    presence: dict = {id(union): (aligned.main, 0.0)}
    dropped: list[int] = []
    _presence_walk(union, aligned, reg.root, presence, extend=extend, dropped=dropped)
    if dropped:
        logger.warning("dropped %d branches not matched to the template", sum(dropped))
    return presence


def _flat_vector(q: EsrvfTree) -> np.ndarray:
    parts: list[np.ndarray] = []
    _vectorize_node(q, parts)
    return np.concatenate(parts)


def fit_basis(
    trees,
    w: MetricWeights | None = None,
    energy: float = 0.99,
    *,
    use_yj: bool = True,
    opts: RegistrationOptions | None = None,
    k_max: int | None = None,
) -> TreeShapeBasis:
    """Learn the tree-shape subspace from a set of trees.

    Computes the iterative mean, registers every tree onto it, vectorizes on
    the union template (padding absentees with null branches), fits one
    power-transform exponent per coordinate, and keeps the smallest number of
    principal directions reaching the requested energy fraction.
    """
    from .stats import karcher_mean_trees

    qs = [tree_forward(t) if isinstance(t, Tree) else t for t in trees]
    if len(qs) < 2:
        raise ValueError("need at least two trees to fit a basis")
    w = w or MetricWeights()
    opts = opts or RegistrationOptions()
    n = qs[0].main.n

    mean_tree, _ = karcher_mean_trees(qs, w, opts)
    union = _UnionSlot.from_tree(mean_tree)

    # First pass registers every tree onto the mean and grows the union;
    # vectorization waits until the slot layout is final.
    presences = [_presence_of(q, union, mean_tree, w, opts, extend=True) for q in qs]
    raw = np.stack([_flat_vector(_pad_tree(union, p, n)[0]) for p in presences])

    lams = fit_yj_lambdas(raw) if use_yj else np.ones(raw.shape[1])
    transformed = yj_forward_matrix(raw, lams)
    center = transformed.mean(axis=0)
    centered = transformed - center
    m = raw.shape[0]
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = np.maximum(sing**2 / (m - 1), 0.0)
    total = float(eigvals.sum())
    # Variance at rounding level relative to the data scale is rank noise.
    floor = 1e-18 * max(float(np.mean(np.sum(transformed**2, axis=1))), 1.0)
    if total <= floor:
        warnings.warn("zero-variance training data: basis has no components")
        eigvals = np.zeros_like(eigvals)
        k = 0
    else:
        cum = np.cumsum(eigvals)
        k = int(np.searchsorted(cum, (energy - 1e-12) * total) + 1)
        k = min(k, eigvals.size)
    if k_max is not None:
        k = min(k, k_max)
    scale = np.where(eigvals[:k] > 0.0, np.sqrt(np.maximum(eigvals[:k], 0.0)), np.inf)
    training = centered @ vt[:k].T / scale
    return TreeShapeBasis(
        topology=union.freeze(),
        n=n,
        mean_tree=mean_tree,
        mean_vector=center,
        yj_lambdas=lams,
        components=vt,
        eigenvalues=eigvals,
        k=k,
        energy=energy,
        weights=w,
        training_coefficients=training,
    )


def project(q: EsrvfTree, basis: TreeShapeBasis, *, opts: RegistrationOptions | None = None) -> np.ndarray:
    """Coefficients of ``q`` in the basis: <T(vec) - mean, comp_i> / sqrt(eig_i).

    A tree already congruent with the template is vectorized directly;
    otherwise it is registered onto the stored mean tree first.
    """
    if basis.topology.matches(q):
        vec = vectorize(q, basis.topology, basis.n)
    else:
        union = _rebuild_union(basis.topology)
        presence = _presence_of(
            q, union, basis.mean_tree, basis.weights, opts or RegistrationOptions(), extend=False
        )
        vec = _flat_vector(_pad_tree(union, presence, basis.n)[0])
    x = yj_forward_matrix(vec[None, :], basis.yj_lambdas)[0]
    if basis.k == 0:
        return np.zeros(0)
    comps = basis.components[: basis.k]
    eig = basis.eigenvalues[: basis.k]
    scale = np.where(eig > 0.0, np.sqrt(np.maximum(eig, 0.0)), np.inf)
    return (x - basis.mean_vector) @ comps.T / scale


def reconstruct(
    p: np.ndarray, basis: TreeShapeBasis, *, with_clamp_count: bool = False
):
    """Invert the chain: combine components, undo the power transform, devectorize."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (basis.k,):
        raise ValueError(f"expected {basis.k} coefficients")
    x = basis.mean_vector.copy()
    if basis.k:
        comps = basis.components[: basis.k]
        eig = np.maximum(basis.eigenvalues[: basis.k], 0.0)
        x = x + (p * np.sqrt(eig)) @ comps
    vec = yj_inverse_matrix(x[None, :], basis.yj_lambdas)[0]
    tree, clamped = devectorize(vec, basis.topology, basis.n)
    if with_clamp_count:
        return tree, clamped
    return tree


def _rebuild_union(top: TopologyNode) -> "_UnionSlot":
    slot = _UnionSlot(top.s)
    for child in top.children:
        slot.children.append(_rebuild_union(child))
    return slot


# ---------------------------------------------------------------------------
# Estimator facade


class TreeShapePca(TransformerMixin, BaseEstimator):
    """Tree-shape subspace model with a fit/transform interface.

    ``fit`` accepts a list of Tree or EsrvfTree; ``transform`` returns an
    (n_trees, k) coefficient array and ``inverse_transform`` maps
    coefficients back to trees.
    """

    def __init__(
        self,
        weights: MetricWeights | None = None,
        energy: float = 0.99,
        use_yj: bool = True,
        grid: int = 100,
        rounds: int = 3,
        k_max: int | None = None,
    ):
        self.weights = weights
        self.energy = energy
        self.use_yj = use_yj
        self.grid = grid
        self.rounds = rounds
        self.k_max = k_max

    def _opts(self) -> RegistrationOptions:
        return RegistrationOptions(grid=self.grid, rounds=self.rounds)

    def fit(self, X, y=None):
        self.basis_ = fit_basis(
            X,
            self.weights or MetricWeights(),
            self.energy,
            use_yj=self.use_yj,
            opts=self._opts(),
            k_max=self.k_max,
        )
        return self

    def transform(self, X) -> np.ndarray:
        qs = [tree_forward(t) if isinstance(t, Tree) else t for t in X]
        return np.stack([project(q, self.basis_, opts=self._opts()) for q in qs])

    def inverse_transform(self, A) -> list[EsrvfTree]:
        return [reconstruct(row, self.basis_) for row in np.atleast_2d(A)]


# ---------------------------------------------------------------------------
# Serialization (arbor4d-basis/1)


def _topology_payload(t: TopologyNode) -> dict:
    return {"s": float(t.s), "children": [_topology_payload(c) for c in t.children]}


def _topology_from(obj: dict) -> TopologyNode:
    return TopologyNode(float(obj["s"]), tuple(_topology_from(c) for c in obj["children"]))


def _esrvf_payload(q: EsrvfTree) -> dict:
    return {
        "v": [[float(x) for x in row] for row in q.main.v],
        "rad": [float(x) for x in q.main.rad],
        "origin": [float(x) for x in q.main.origin],
        "children": [{"s": float(s), "subtree": _esrvf_payload(sub)} for s, sub in q.children],
    }


def _esrvf_from(obj: dict) -> EsrvfTree:
    branch = EsrvfBranch(
        np.array(obj["v"], dtype=np.float64),
        np.array(obj["rad"], dtype=np.float64),
        np.array(obj["origin"], dtype=np.float64),
    )
    kids = tuple((float(c["s"]), _esrvf_from(c["subtree"])) for c in obj["children"])
    return EsrvfTree(branch, kids)


def basis_payload(basis: TreeShapeBasis) -> dict:
    return {
        "format": BASIS_FORMAT,
        "samples": basis.n,
        "topology": _topology_payload(basis.topology),
        "mean_tree": _esrvf_payload(basis.mean_tree),
        "mean_vector": basis.mean_vector.tolist(),
        "yj_lambdas": basis.yj_lambdas.tolist(),
        "components": basis.components.tolist(),
        "eigenvalues": basis.eigenvalues.tolist(),
        "k": basis.k,
        "energy": basis.energy,
        "weights": {
            "lambda_m": basis.weights.lambda_m,
            "lambda_s": basis.weights.lambda_s,
            "lambda_p": basis.weights.lambda_p,
            "w_rad": basis.weights.w_rad,
        },
    }


def basis_from_payload(obj: dict) -> TreeShapeBasis:
    if obj.get("format") != BASIS_FORMAT:
        raise ValueError(f"expected {BASIS_FORMAT!r} document")
    wts = obj["weights"]
    return TreeShapeBasis(
        topology=_topology_from(obj["topology"]),
        n=int(obj["samples"]),
        mean_tree=_esrvf_from(obj["mean_tree"]),
        mean_vector=np.array(obj["mean_vector"], dtype=np.float64),
        yj_lambdas=np.array(obj["yj_lambdas"], dtype=np.float64),
        components=np.array(obj["components"], dtype=np.float64),
        eigenvalues=np.array(obj["eigenvalues"], dtype=np.float64),
        k=int(obj["k"]),
        energy=float(obj["energy"]),
        weights=MetricWeights(wts["lambda_m"], wts["lambda_s"], wts["lambda_p"], wts["w_rad"]),
    )


def serialize_basis(basis: TreeShapeBasis) -> bytes:
    return json.dumps(basis_payload(basis), separators=(",", ":"), allow_nan=False).encode("utf-8")


def parse_basis(data: bytes | str) -> TreeShapeBasis:
    return basis_from_payload(json.loads(data))
