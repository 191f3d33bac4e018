"""Velocity-field representation of branches and trees, with group actions.

A branch (f, r) maps to (v, rad) where v = f'/sqrt(||f'||) per polyline
segment (the last sample repeats the final segment so |v| = n) and rad is
the radius channel carried unchanged. The transform is exactly invertible
for sampled polylines: integration is the cumulative rectangle rule, the
discrete inverse of the per-segment derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .treemodel import Branch, Tree
from .warps import Diffeo, interp_rows

ZERO_SPEED = 1e-12


@dataclass(frozen=True, eq=False)
class EsrvfBranch:
    """Velocity/radius image of a branch plus its retained start point."""

    v: np.ndarray
    rad: np.ndarray
    origin: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.v, dtype=np.float64)
        rad = np.array(self.rad, dtype=np.float64)
        origin = np.array(self.origin, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 2:
            raise ValueError("v must be an (n, 3) array with n >= 2")
        if rad.shape != (v.shape[0],):
            raise ValueError("rad must match v in length")
        if np.any(rad < 0.0):
            raise ValueError("radii must be nonnegative")
        if origin.shape != (3,):
            raise ValueError("origin must be a 3-vector")
        for arr in (v, rad, origin):
            arr.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "rad", rad)
        object.__setattr__(self, "origin", origin)

    @property
    def n(self) -> int:
        return int(self.v.shape[0])


@dataclass(frozen=True, eq=False)
class EsrvfTree:
    """Per-branch velocity fields plus bifurcation parameters, recursively."""

    main: EsrvfBranch
    children: tuple[tuple[float, "EsrvfTree"], ...] = ()

    def __post_init__(self) -> None:
        kids = []
        for s, sub in self.children:
            s = float(s)
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"bifurcation parameter {s} outside [0, 1]")
            kids.append((s, sub))
        object.__setattr__(self, "children", tuple(kids))

    def branch_count(self) -> int:
        return 1 + sum(sub.branch_count() for _, sub in self.children)

    def child_params(self) -> np.ndarray:
        return np.array([s for s, _ in self.children])


def esrvf_forward(branch: Branch) -> EsrvfBranch:
    """Map a branch to its velocity/radius representation."""
    pts = branch.points
    n = branch.n
    h = 1.0 / (n - 1)
    deriv = np.diff(pts, axis=0) / h
    speed = np.linalg.norm(deriv, axis=1)
    v = np.zeros_like(deriv)
    ok = speed >= ZERO_SPEED
    v[ok] = deriv[ok] / np.sqrt(speed[ok])[:, None]
    v = np.vstack([v, v[-1:]])
    return EsrvfBranch(v, branch.radii.copy(), pts[0].copy())


def esrvf_inverse(q: EsrvfBranch) -> Branch:
    """Recover the branch: cumulative integration of v * ||v|| from the origin."""
    n = q.n
    h = 1.0 / (n - 1)
    g = q.v * np.linalg.norm(q.v, axis=1)[:, None]
    pts = np.empty((n, 3))
    pts[0] = q.origin
    pts[1:] = q.origin + np.cumsum(g[:-1] * h, axis=0)
    return Branch(np.column_stack([pts, q.rad]))


def tree_forward(tree: Tree) -> EsrvfTree:
    children = tuple((s, tree_forward(sub)) for s, sub in tree.children)
    return EsrvfTree(esrvf_forward(tree.main), children)


def tree_inverse(q: EsrvfTree, *, origin: np.ndarray | None = None) -> Tree:
    """Invert a whole tree, re-attaching children on the recovered parents."""
    main_q = q.main if origin is None else EsrvfBranch(q.main.v, q.main.rad, origin)
    main = esrvf_inverse(main_q)
    children = []
    for s, sub in q.children:
        attach = main.point_at(s)
        children.append((s, tree_inverse(sub, origin=attach)))
    return Tree(main, tuple(children))


def check_rotation(o: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    o = np.asarray(o, dtype=np.float64)
    if o.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    if np.max(np.abs(o.T @ o - np.eye(3))) > tol:
        raise ValueError("matrix is not orthogonal")
    if abs(np.linalg.det(o) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return o


def apply_rotation(q: EsrvfTree, o: np.ndarray) -> EsrvfTree:
    """Rotate every velocity sample (and origin); radii and s are unchanged."""
    o = check_rotation(o)
    return _rotate(q, o)


def _rotate(q: EsrvfTree, o: np.ndarray) -> EsrvfTree:
    main = EsrvfBranch(q.main.v @ o.T, q.main.rad, o @ q.main.origin)
    children = tuple((s, _rotate(sub, o)) for s, sub in q.children)
    return EsrvfTree(main, children)


def apply_reparam(q: EsrvfBranch, g: Diffeo) -> EsrvfBranch:
    """Act by a reparameterization: v -> (v o g) sqrt(g'), rad -> rad o g.

    The radius channel composes without the Jacobian factor: it is a
    pointwise thickness, and the square-root weight would corrupt it on
    inversion. Output is resampled on the uniform n-grid.
    """
    grid = np.linspace(0.0, 1.0, q.n)
    t = g(grid)
    slope = np.maximum(g.derivative(grid), 0.0)
    v = interp_rows(q.v, t) * np.sqrt(slope)[:, None]
    rad = np.maximum(interp_rows(q.rad, t), 0.0)
    return EsrvfBranch(v, rad, q.origin)
