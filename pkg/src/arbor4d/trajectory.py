"""Trajectories of tree shapes in the learned subspace and their alignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basis import TreeShapeBasis, fit_basis, project, reconstruct
from .esrvf import EsrvfTree, tree_inverse
from .metric import MetricWeights, apply_map
from .spatreg import RegistrationOptions, register_sequence, register_trees
from .treemodel import Tree4D
from .warps import DEFAULT_STENCIL, Diffeo, optimal_warp

logger = logging.getLogger(__name__)

TimeWarp = Diffeo

ZERO_RATE = 1e-12


@dataclass(frozen=True, eq=False)
class PcaTrajectory:
    """d coefficient vectors sampled on a uniform time grid over [0, 1]."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("a trajectory needs at least two points")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def d(self) -> int:
        return int(self.points.shape[0])

    @property
    def k(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True, eq=False)
class TrajectorySrvf:
    """Velocity transform of a trajectory: d-1 midpoint samples plus the start."""

    w: np.ndarray
    start: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=np.float64)
        start = np.array(self.start, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValueError("need at least one velocity sample")
        if start.shape != (w.shape[1],):
            raise ValueError("start point must match the trajectory dimension")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(start))):
            raise ValueError("entries must be finite")
        w.flags.writeable = False
        start.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "start", start)

    @property
    def d(self) -> int:
        return int(self.w.shape[0]) + 1

    @property
    def k(self) -> int:
        return int(self.w.shape[1])


def pca_srvf(traj: PcaTrajectory) -> TrajectorySrvf:
    """Map to velocity form: w = a' / sqrt(||a'||) on the midpoint grid."""
    d = traj.d
    dt = 1.0 / (d - 1)
    deriv = np.diff(traj.points, axis=0) / dt
    speed = np.linalg.norm(deriv, axis=1)
    w = np.zeros_like(deriv)
    ok = speed >= ZERO_RATE
    w[ok] = deriv[ok] / np.sqrt(speed[ok])[:, None]
    return TrajectorySrvf(w, traj.points[0].copy())


def pca_srvf_inverse(w: TrajectorySrvf, start: np.ndarray | None = None) -> PcaTrajectory:
    """Cumulative integration of w * ||w|| from the start point.

    The rectangle rule on the midpoint grid is the exact discrete inverse of
    the forward differences used by :func:`pca_srvf`.
    """
    start = w.start if start is None else np.asarray(start, dtype=np.float64)
    d = w.d
    dt = 1.0 / (d - 1)
    g = w.w * np.linalg.norm(w.w, axis=1)[:, None]
    pts = np.empty((d, w.k))
    pts[0] = start
    pts[1:] = start + np.cumsum(g * dt, axis=0)
    return PcaTrajectory(pts)


def resample_trajectory(points: np.ndarray, times: np.ndarray, d: int) -> PcaTrajectory:
    """Linear interpolation onto d equidistant parameters of [0, 1]."""
    times = np.asarray(times, dtype=np.float64)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grid = np.linspace(0.0, 1.0, d)
    cols = [np.interp(grid, times, points[:, j]) for j in range(points.shape[1])]
    return PcaTrajectory(np.stack(cols, axis=1))


def trajectory_distance(w1: TrajectorySrvf, w2: TrajectorySrvf) -> float:
    """L2 distance between velocity transforms (rectangle rule in time)."""
    if w1.d != w2.d or w1.k != w2.k:
        raise ValueError("trajectories must share d and k")
    dt = 1.0 / (w1.d - 1)
    return float(np.sqrt(np.sum((w1.w - w2.w) ** 2) * dt))


def _interp_midpoints(w: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Interpolate rows of ``w`` (samples at cell midpoints of [0, 1]) at ``pos``."""
    n = w.shape[0]
    idx = pos * n - 0.5
    i0 = np.clip(np.floor(idx).astype(np.int64), 0, n - 2)
    frac = np.clip(idx - i0, 0.0, 1.0)
    return w[i0] * (1.0 - frac)[:, None] + w[i0 + 1] * frac[:, None]


def warp_trajectory_srvf(w: TrajectorySrvf, warp: TimeWarp, *, literal: bool = False) -> TrajectorySrvf:
    """Act by a time warp: (w o g) sqrt(g'), or plain composition if ``literal``.

    Samples live on the midpoint grid of the underlying trajectory cells, and
    the action evaluates the warp there; this keeps the discrete action
    second-order consistent with the continuum composition.
    """
    n = w.w.shape[0]
    mids = (np.arange(n) + 0.5) / n
    vals = _interp_midpoints(w.w, np.asarray(warp(mids), dtype=np.float64))
    if not literal:
        slope = np.maximum(warp.derivative(mids), 0.0)
        vals = vals * np.sqrt(slope)[:, None]
    return TrajectorySrvf(vals, w.start)


def _refine_warp(w1: np.ndarray, w2: np.ndarray, warp: TimeWarp, *, literal: bool) -> TimeWarp:
    """Local continuous refinement of a lattice warp.

    The lattice search fixes the global ordering but its slopes come from a
    coarse ratio set; this polishes the knot values by quasi-Newton descent
    on the aligned residual, with monotonicity enforced through a positive
    increment parameterization.
    """
    from scipy.optimize import minimize

    m = warp.values.size
    n = w1.shape[0]
    grid = np.linspace(0.0, 1.0, m)
    mids = (np.arange(n) + 0.5) / n

    def unpack(z: np.ndarray) -> np.ndarray:
        e = np.exp(z - z.max())
        vals = np.concatenate([[0.0], np.cumsum(e)])
        return vals / vals[-1]

    def objective(z: np.ndarray) -> float:
        vals = unpack(z)
        pos = np.interp(mids, grid, vals)
        aligned = _interp_midpoints(w2, pos)
        if not literal:
            slopes = np.diff(vals) * (m - 1)
            cell = np.clip((mids * (m - 1)).astype(np.int64), 0, m - 2)
            aligned = aligned * np.sqrt(np.maximum(slopes[cell], 0.0))[:, None]
        r = w1 - aligned
        return float(np.sum(r * r))

    z0 = np.log(np.maximum(np.diff(warp.values), 1e-9))
    result = minimize(objective, z0, method="L-BFGS-B", options={"maxiter": 200})
    values = unpack(result.x)
    if np.any(np.diff(values) <= 0.0):
        return warp
    return Diffeo(values)


def temporal_register(
    w1: TrajectorySrvf,
    w2: TrajectorySrvf,
    *,
    literal: bool = False,
    refine: bool = True,
    stencil: tuple[tuple[int, int], ...] = DEFAULT_STENCIL,
) -> tuple[TimeWarp, TrajectorySrvf, float]:
    """Optimal execution-rate alignment of ``w2`` onto ``w1``.

    Minimizes ``||w1 - (w2 o g) sqrt(g')||^2`` over monotone lattice paths
    (``literal=True`` drops the Jacobian factor, reproducing the plain
    composition objective). With ``refine`` the lattice solution is polished
    by a monotone continuous descent; the returned warp is the best of the
    identity, the lattice path, and the refined path under the aligned
    distance, so registration never loses to no registration. Returns the
    warp, the aligned trajectory, and the remaining squared distance.
    """
    if w1.d != w2.d or w1.k != w2.k:
        raise ValueError("trajectories must share d and k")
    if w1.d < 3:
        raise ValueError("need at least three trajectory samples")
    n = w1.w.shape[0]
    dp_warp, _ = optimal_warp(w1.w, w2.w, n, jacobian=not literal, stencil=stencil)
    candidates = [Diffeo.identity(n), dp_warp]
    if refine:
        candidates.append(_refine_warp(w1.w, w2.w, dp_warp, literal=literal))
    best = None
    for cand in candidates:
        aligned = warp_trajectory_srvf(w2, cand, literal=literal)
        dist = trajectory_distance(w1, aligned)
        if best is None or dist < best[2]:
            best = (cand, aligned, dist)
    warp, aligned, dist = best
    return warp, aligned, float(dist**2)


# ---------------------------------------------------------------------------
# Two-sequence spatiotemporal pipeline


@dataclass(frozen=True, eq=False)
class PipelineResult:
    """Everything the two-sequence registration produces."""

    basis: TreeShapeBasis
    alpha1: PcaTrajectory
    alpha2: PcaTrajectory
    srvf1: TrajectorySrvf
    srvf2: TrajectorySrvf
    srvf2_aligned: TrajectorySrvf
    warp: TimeWarp
    distance_before: float
    distance_after: float
    aligned1: Tree4D
    aligned2: Tree4D
    clamped_samples: int


def _frames_from_pca(
    traj: PcaTrajectory, basis: TreeShapeBasis
) -> tuple[list[EsrvfTree], int]:
    frames = []
    clamped = 0
    for row in traj.points:
        tree, c = reconstruct(row, basis, with_clamp_count=True)
        frames.append(tree)
        clamped += c
    return frames, clamped


def tree4d_from_pca(traj: PcaTrajectory, basis: TreeShapeBasis) -> tuple[Tree4D, int]:
    """Invert a PCA trajectory to a 4D tree on a uniform time grid."""
    frames, clamped = _frames_from_pca(traj, basis)
    times = np.linspace(0.0, 1.0, traj.d)
    return Tree4D(times, tuple(tree_inverse(q) for q in frames)), clamped


def spatiotemporal_pipeline(
    h1: Tree4D,
    h2: Tree4D,
    w: MetricWeights | None = None,
    *,
    traj_samples: int = 30,
    energy: float = 0.99,
    use_yj: bool = True,
    literal_warp: bool = False,
    opts: RegistrationOptions | None = None,
) -> PipelineResult:
    """Register two 4D trees spatially, then temporally.

    Both sequences are co-registered frame to frame, a shared shape basis is
    fitted over all frames, the coefficient trajectories are re-discretized
    at ``traj_samples`` equidistant times, sequence 1 is spatially registered
    onto sequence 2 time by time (reconstruct, register, re-project), and the
    velocity transforms are aligned by an optimal time warp on sequence 2.
    """
    w = w or MetricWeights()
    opts = opts or RegistrationOptions()

    seq1 = register_sequence(h1, w, opts)
    seq2 = register_sequence(h2, w, opts)

    basis = fit_basis(list(seq1.frames) + list(seq2.frames), w, energy, use_yj=use_yj, opts=opts)

    # The fit already aligned every frame onto the mean; reuse those
    # coefficients so both sequences share one consistent alignment.
    a1 = basis.training_coefficients[: len(seq1.frames)]
    a2 = basis.training_coefficients[len(seq1.frames) :]
    alpha1 = resample_trajectory(a1, h1.times, traj_samples)
    alpha2 = resample_trajectory(a2, h2.times, traj_samples)

    # Per-time spatial registration of sequence 1 onto sequence 2.
    rows = []
    clamped = 0
    for t in range(traj_samples):
        q1t, c1 = reconstruct(alpha1.points[t], basis, with_clamp_count=True)
        q2t, c2 = reconstruct(alpha2.points[t], basis, with_clamp_count=True)
        clamped += c1 + c2
        reg, _ = register_trees(q2t, q1t, w, opts)
        rows.append(project(apply_map(q1t, reg), basis, opts=opts))
    alpha1 = PcaTrajectory(np.stack(rows))

    srvf1 = pca_srvf(alpha1)
    srvf2 = pca_srvf(alpha2)
    dist_before = trajectory_distance(srvf1, srvf2)
    warp, srvf2_aligned, _ = temporal_register(srvf1, srvf2, literal=literal_warp, stencil=opts.stencil)
    dist_after = trajectory_distance(srvf1, srvf2_aligned)

    aligned1, c1 = tree4d_from_pca(alpha1, basis)
    aligned2, c2 = tree4d_from_pca(pca_srvf_inverse(srvf2_aligned), basis)
    clamped += c1 + c2
    if clamped:
        logger.info("pipeline clamped %d reconstructed samples", clamped)

    return PipelineResult(
        basis=basis,
        alpha1=alpha1,
        alpha2=alpha2,
        srvf1=srvf1,
        srvf2=srvf2,
        srvf2_aligned=srvf2_aligned,
        warp=warp,
        distance_before=dist_before,
        distance_after=dist_after,
        aligned1=aligned1,
        aligned2=aligned2,
        clamped_samples=clamped,
    )


def geodesic4d(
    w1: TrajectorySrvf,
    w2_aligned: TrajectorySrvf,
    basis: TreeShapeBasis,
    steps: int,
) -> list[Tree4D]:
    """Straight-line path between aligned 4D trees, inverted frame by frame."""
    if steps < 2:
        raise ValueError("need at least two steps")
    if w1.d != w2_aligned.d or w1.k != w2_aligned.k:
        raise ValueError("trajectories must share d and k")
    path = []
    total_clamped = 0
    for j in range(steps):
        tau = j / (steps - 1)
        w = TrajectorySrvf(
            (1.0 - tau) * w1.w + tau * w2_aligned.w,
            (1.0 - tau) * w1.start + tau * w2_aligned.start,
        )
        seq, clamped = tree4d_from_pca(pca_srvf_inverse(w), basis)
        total_clamped += clamped
        path.append(seq)
    if total_clamped:
        logger.info("geodesic clamped %d reconstructed samples", total_clamped)
    return path
