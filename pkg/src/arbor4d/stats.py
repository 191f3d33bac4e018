"""Means, modes of variation, and generative synthesis of 4D trees."""

from __future__ import annotations

import json
import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator

from .basis import basis_from_payload, basis_payload, fit_basis
from .esrvf import EsrvfTree
from .metric import (
    MetricWeights,
    RegistrationMap,
    apply_map,
    complete_pair,
    midpoint,
    positional_map,
)
from .spatreg import RegistrationOptions, register_sequence, register_trees
from .trajectory import (
    TimeWarp,
    TrajectorySrvf,
    pca_srvf,
    pca_srvf_inverse,
    resample_trajectory,
    temporal_register,
    trajectory_distance,
    tree4d_from_pca,
)
from .treemodel import Tree4D
from .warps import Diffeo

logger = logging.getLogger(__name__)

MODEL_FORMAT = "arbor4d-model/1"


def karcher_mean_trees(
    qs: list[EsrvfTree],
    w: MetricWeights | None = None,
    opts: RegistrationOptions | None = None,
) -> tuple[EsrvfTree, list[RegistrationMap]]:
    """Iterative mean of tree shapes.

    Starts from the first tree; each remaining tree is registered onto the
    running mean and averaged in with weight 1/2. Unmatched branches enter
    the mean at half amplitude through the usual null completion. Returns
    the mean and the per-tree registration maps from the loop.
    """
    if not qs:
        raise ValueError("need at least one tree")
    w = w or MetricWeights()
    opts = opts or RegistrationOptions()
    mean = qs[0]
    m = min(opts.grid, mean.main.n)
    maps: list[RegistrationMap] = [positional_map(mean, qs[0], m)]
    for q in qs[1:]:
        reg, _ = register_trees(mean, q, w, opts)
        maps.append(reg)
        aligned = apply_map(q, reg)
        c1, c2 = complete_pair(mean, aligned, reg.root)
        mean = midpoint(c1, c2)
    return mean, maps


def karcher_mean_trajectories(
    ws: list[TrajectorySrvf],
    *,
    literal: bool = False,
    printed_update: bool = False,
    passes: int = 1,
) -> tuple[TrajectorySrvf, list[TimeWarp], list[TrajectorySrvf]]:
    """Iterative mean of velocity-transformed trajectories.

    Every trajectory is temporally registered onto the running mean, which
    by default advances as the standard running average
    ``mean <- ((i - 1) * mean + aligned_i) / i``; ``printed_update=True``
    switches to the update ``mean <- (mean + aligned_i) / i`` (which is not
    a fixed point for repeated inputs). Additional ``passes`` repeat the
    loop starting from the previous mean.
    """
    if not ws:
        raise ValueError("need at least one trajectory")
    d, k = ws[0].d, ws[0].k
    for wi in ws:
        if wi.d != d or wi.k != k:
            raise ValueError("trajectories must share d and k")
    if passes < 1:
        raise ValueError("need at least one pass")

    def _align(target: TrajectorySrvf, wi: TrajectorySrvf):
        if d >= 3:
            warp, wt, _ = temporal_register(target, wi, literal=literal)
        else:
            warp, wt = Diffeo.identity(2), wi
        return warp, wt

    # First pass follows the printed loop: the running mean is the target.
    mean = ws[0]
    warps: list[TimeWarp] = []
    aligned: list[TrajectorySrvf] = []
    acc_w = np.zeros_like(mean.w)
    acc_start = np.zeros_like(mean.start)
    for i, wi in enumerate(ws, start=1):
        warp, wt = _align(mean, wi)
        warps.append(warp)
        aligned.append(wt)
        if printed_update:
            mean = TrajectorySrvf((mean.w + wt.w) / i, (mean.start + wt.start) / i)
        else:
            acc_w += wt.w
            acc_start += wt.start
            mean = TrajectorySrvf(acc_w / i, acc_start / i)

    # Later passes re-register every input onto the fixed previous mean.
    for _ in range(passes - 1):
        warps = []
        aligned = []
        for wi in ws:
            warp, wt = _align(mean, wi)
            warps.append(warp)
            aligned.append(wt)
        mean = TrajectorySrvf(
            np.mean([wt.w for wt in aligned], axis=0),
            np.mean([wt.start for wt in aligned], axis=0),
        )
    return mean, warps, aligned


def modes_of_variation(
    aligned: list[TrajectorySrvf], mean: TrajectorySrvf, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k eigenpairs of the sample covariance of flattened (w - mean).

    Returns (modes, variances): modes is (k, (d-1)*dim) with orthonormal
    rows, variances the matching nonincreasing eigenvalues.
    """
    n = len(aligned)
    if n < 2:
        raise ValueError("need at least two aligned trajectories")
    if k > n - 1:
        warnings.warn(f"requested {k} modes but only {n - 1} are identifiable; truncating")
        k = n - 1
    flat = np.stack([(wt.w - mean.w).ravel() for wt in aligned])
    _, sing, vt = np.linalg.svd(flat / np.sqrt(n - 1), full_matrices=False)
    variances = np.maximum(sing**2, 0.0)
    k = min(k, variances.size)
    return vt[:k], variances[:k]


class Trajectory4DModel(BaseEstimator):
    """Statistical model of a population of 4D trees.

    ``fit`` co-registers the sequences, learns a shared shape basis, maps
    every sequence to its velocity transform, and computes the mean
    trajectory and principal modes. ``synthesize`` and ``sample_mode``
    generate new 4D trees from the model.
    """

    def __init__(
        self,
        weights: MetricWeights | None = None,
        traj_samples: int = 30,
        energy: float = 0.99,
        clamp: float = 3.0,
        use_yj: bool = True,
        n_modes: int | None = None,
        passes: int = 1,
        printed_update: bool = False,
        literal_warp: bool = False,
        grid: int = 100,
        rounds: int = 3,
    ):
        self.weights = weights
        self.traj_samples = traj_samples
        self.energy = energy
        self.clamp = clamp
        self.use_yj = use_yj
        self.n_modes = n_modes
        self.passes = passes
        self.printed_update = printed_update
        self.literal_warp = literal_warp
        self.grid = grid
        self.rounds = rounds

    def _opts(self) -> RegistrationOptions:
        return RegistrationOptions(grid=self.grid, rounds=self.rounds)

    def fit(self, X: list[Tree4D], y=None):
        w = self.weights or MetricWeights()
        opts = self._opts()
        seqs = [register_sequence(h, w, opts) for h in X]
        frames = [q for seq in seqs for q in seq.frames]
        self.basis_ = fit_basis(frames, w, self.energy, use_yj=self.use_yj, opts=opts)
        trajectories = []
        offset = 0
        for h, seq in zip(X, seqs):
            coeffs = self.basis_.training_coefficients[offset : offset + len(seq.frames)]
            offset += len(seq.frames)
            traj = resample_trajectory(coeffs, h.times, self.traj_samples)
            trajectories.append(pca_srvf(traj))
        self.srvfs_ = trajectories
        mean, warps, aligned = karcher_mean_trajectories(
            trajectories,
            literal=self.literal_warp,
            printed_update=self.printed_update,
            passes=self.passes,
        )
        self.mean_srvf_ = mean
        self.warps_ = warps
        self.aligned_ = aligned
        if len(aligned) >= 2:
            k = self.n_modes if self.n_modes is not None else len(aligned) - 1
            self.modes_, self.variances_ = modes_of_variation(aligned, mean, k)
        else:
            dim = mean.w.size
            self.modes_ = np.zeros((0, dim))
            self.variances_ = np.zeros(0)
        return self

    @property
    def k_(self) -> int:
        return int(self.modes_.shape[0])

    def _invert(self, w: TrajectorySrvf) -> Tree4D:
        seq, clamped = tree4d_from_pca(pca_srvf_inverse(w), self.basis_)
        if clamped:
            logger.info("inversion clamped %d reconstructed samples", clamped)
        return seq

    def mean_tree4d(self) -> Tree4D:
        """The mean 4D tree, inverted for visualization."""
        return self._invert(self.mean_srvf_)

    def sample_mode(self, index: int, tau: float) -> Tree4D:
        """4D tree at ``tau`` standard deviations along mode ``index`` (1-based)."""
        if not 1 <= index <= self.k_:
            raise ValueError(f"mode index must be in 1..{self.k_}")
        direction = self.modes_[index - 1].reshape(self.mean_srvf_.w.shape)
        w = self.mean_srvf_.w + tau * np.sqrt(self.variances_[index - 1]) * direction
        return self._invert(TrajectorySrvf(w, self.mean_srvf_.start))

    def synthesize(self, coeffs=None, seed: int | None = None) -> Tree4D:
        """Generate a 4D tree from mode coefficients or a seeded normal draw.

        Coefficients are clamped into [-clamp, clamp] standard deviations.
        """
        if coeffs is None:
            if seed is None:
                raise ValueError("provide coefficients or a seed")
            rng = np.random.Generator(np.random.PCG64(seed))
            coeffs = rng.standard_normal(self.k_)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (self.k_,):
            raise ValueError(f"expected {self.k_} coefficients")
        coeffs = np.clip(coeffs, -self.clamp, self.clamp)
        w = self.mean_srvf_.w.copy()
        for i in range(self.k_):
            w += coeffs[i] * np.sqrt(self.variances_[i]) * self.modes_[i].reshape(w.shape)
        return self._invert(TrajectorySrvf(w, self.mean_srvf_.start))

    def project_trajectory(self, w: TrajectorySrvf) -> np.ndarray:
        """Mode coefficients of a trajectory: <w - mean, e_i> / sqrt(var_i)."""
        diff = (w.w - self.mean_srvf_.w).ravel()
        scale = np.where(self.variances_ > 0.0, np.sqrt(self.variances_), np.inf)
        return self.modes_ @ diff / scale

    def distances_to_mean(self) -> np.ndarray:
        return np.array([trajectory_distance(self.mean_srvf_, wt) for wt in self.aligned_])


# ---------------------------------------------------------------------------
# Model serialization (arbor4d-model/1)


def serialize_model(model: Trajectory4DModel) -> bytes:
    doc = {
        "format": MODEL_FORMAT,
        "traj_samples": model.traj_samples,
        "clamp": model.clamp,
        "basis": basis_payload(model.basis_),
        "mean_w": model.mean_srvf_.w.tolist(),
        "mean_start": model.mean_srvf_.start.tolist(),
        "modes": model.modes_.tolist(),
        "variances": model.variances_.tolist(),
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def parse_model(data: bytes | str) -> Trajectory4DModel:
    obj = json.loads(data)
    if obj.get("format") != MODEL_FORMAT:
        raise ValueError(f"expected {MODEL_FORMAT!r} document")
    model = Trajectory4DModel(traj_samples=int(obj["traj_samples"]), clamp=float(obj["clamp"]))
    model.basis_ = basis_from_payload(obj["basis"])
    model.mean_srvf_ = TrajectorySrvf(
        np.array(obj["mean_w"], dtype=np.float64), np.array(obj["mean_start"], dtype=np.float64)
    )
    model.modes_ = np.array(obj["modes"], dtype=np.float64)
    model.variances_ = np.array(obj["variances"], dtype=np.float64)
    model.srvfs_ = []
    model.warps_ = []
    model.aligned_ = []
    return model
