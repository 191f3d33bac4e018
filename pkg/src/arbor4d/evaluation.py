"""Registration quality protocols: geodesic error, cycle consistency, description length."""

from __future__ import annotations

import numpy as np

from .basis import fit_basis
from .esrvf import EsrvfTree, tree_forward
from .metric import MetricWeights, NodeMap, positional_map, tree_dist_sq_aligned
from .parallel import parallel_map
from .spatreg import RegistrationOptions, register_trees
from .treemodel import Tree, Tree4D

CYCLE_EPSILONS = (0.1, 0.05, 0.02, 0.01)


def registration_distances(
    q1: EsrvfTree,
    q2: EsrvfTree,
    w: MetricWeights,
    opts: RegistrationOptions,
) -> tuple[float, float]:
    """(before, after) distances: positional identity map vs full registration."""
    m = min(opts.grid, q1.main.n)
    before = float(np.sqrt(max(tree_dist_sq_aligned(q1, q2, positional_map(q1, q2, m), w), 0.0)))
    _, after = register_trees(q1, q2, w, opts)
    return before, after


def cycle_errors(
    tree_a: Tree,
    tree_b: Tree,
    w: MetricWeights | None = None,
    opts: RegistrationOptions | None = None,
) -> np.ndarray:
    """Per-sample round-trip displacement through a two-way registration.

    Each skeleton sample of ``tree_a`` is mapped to its correspondent on
    ``tree_b`` (registration of a onto b) and back (registration of b onto
    a); the result is the array of displacements measured on ``tree_a``.
    Samples on branches that do not survive the round trip get ``inf``.
    """
    w = w or MetricWeights()
    opts = opts or RegistrationOptions()
    qa, qb = tree_forward(tree_a), tree_forward(tree_b)
    reg_ab, _ = register_trees(qb, qa, w, opts)  # warps live on a's branches
    reg_ba, _ = register_trees(qa, qb, w, opts)  # warps live on b's branches
    errors: list[np.ndarray] = []
    _cycle_walk(tree_a, reg_ab.root, reg_ba.root, errors)
    return np.concatenate(errors) if errors else np.zeros(0)


def _cycle_walk(node_a: Tree, nm_ab: NodeMap, nm_ba: NodeMap, errors: list) -> None:
    branch = node_a.main
    t = np.linspace(0.0, 1.0, branch.n)
    # a(t) pairs with b(g^-1(t)); b(r) pairs back with a(d^-1(r)).
    r = nm_ab.warp.inverse_at(t)
    t_back = nm_ba.warp.inverse_at(r)
    pts = branch.points
    pos = np.stack([np.interp(t_back, t, pts[:, d]) for d in range(3)], axis=1)
    errors.append(np.linalg.norm(pos - pts, axis=1))

    fwd = {j: i for i, j in nm_ab.matching.pairs}  # a-child -> b-child
    back = {i: j for i, j in nm_ba.matching.pairs}  # a-child <- b-child
    for j_a, (_, sub_a) in enumerate(node_a.children):
        i_b = fwd.get(j_a)
        if i_b is not None and back.get(i_b) == j_a:
            _cycle_walk(sub_a, nm_ab.children[j_a], nm_ba.children[i_b], errors)
        else:
            errors.append(np.full(_sample_count(sub_a), np.inf))


def _sample_count(tree: Tree) -> int:
    return tree.main.n + sum(_sample_count(sub) for _, sub in tree.children)


def cycle_violation_fractions(
    errors: np.ndarray, epsilons=CYCLE_EPSILONS
) -> dict[float, float]:
    """Fraction of samples whose round-trip displacement exceeds each threshold."""
    out = {}
    for eps in epsilons:
        out[float(eps)] = float(np.mean(errors > eps)) if errors.size else 0.0
    return out


def _pair_distances(item) -> tuple[float, float]:
    a, b, w, opts = item
    if isinstance(a, Tree4D) != isinstance(b, Tree4D):
        raise ValueError("cannot pair a tree with a sequence")
    if isinstance(a, Tree4D):
        if a.n_frames != b.n_frames:
            raise ValueError("paired sequences must have equal frame counts")
        frame_stats = [
            registration_distances(tree_forward(fa), tree_forward(fb), w, opts)
            for fa, fb in zip(a.frames, b.frames)
        ]
        return float(np.mean([s[0] for s in frame_stats])), float(np.mean([s[1] for s in frame_stats]))
    before, after = registration_distances(tree_forward(a), tree_forward(b), w, opts)
    return before, after


def geodesic_error_suite(
    pairs: list[tuple[Tree4D | Tree, Tree4D | Tree]],
    w: MetricWeights,
    opts: RegistrationOptions,
    workers: int = 1,
) -> dict:
    """Mean/median/std of distances before vs after spatial registration."""
    stats = parallel_map(_pair_distances, [(a, b, w, opts) for a, b in pairs], workers)
    return {
        "pairs": len(pairs),
        "before": _stats([s[0] for s in stats]),
        "after": _stats([s[1] for s in stats]),
    }


def _pair_cycle(item) -> dict[float, float]:
    a, b, w, opts, epsilons = item
    return cycle_violation_fractions(cycle_errors(a, b, w, opts), epsilons)


def cycle_consistency_suite(
    pairs: list[tuple[Tree, Tree]],
    w: MetricWeights,
    opts: RegistrationOptions,
    epsilons=CYCLE_EPSILONS,
    workers: int = 1,
) -> dict:
    results = parallel_map(_pair_cycle, [(a, b, w, opts, tuple(epsilons)) for a, b in pairs], workers)
    per_eps: dict[float, list[float]] = {float(e): [] for e in epsilons}
    for fractions in results:
        for eps, frac in fractions.items():
            per_eps[eps].append(frac)
    return {
        "pairs": len(pairs),
        "epsilons": {str(eps): _stats(vals) for eps, vals in per_eps.items()},
    }


def description_length_curve(
    trees,
    w: MetricWeights,
    opts: RegistrationOptions,
    *,
    use_yj: bool = True,
) -> dict:
    """Cumulative-energy curve against the number of components."""
    basis = fit_basis(trees, w, energy=1.0, use_yj=use_yj, opts=opts)
    cum = basis.cumulative_energy()
    return {
        "n_trees": len(list(trees)),
        "curve": [[i + 1, float(c)] for i, c in enumerate(cum)],
    }


def _stats(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": 0.0, "median": 0.0, "std": 0.0}
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "std": float(arr.std()),
    }
