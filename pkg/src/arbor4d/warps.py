"""Monotone warping functions of [0, 1] and dynamic-programming alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Lattice moves (di, dj) with coprime components in 1..3. (1, 1) comes first
# so that exact cost ties resolve to the identity path.
DEFAULT_STENCIL: tuple[tuple[int, int], ...] = (
    (1, 1),
    (1, 2),
    (2, 1),
    (1, 3),
    (3, 1),
    (2, 3),
    (3, 2),
)


def interp_rows(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Linearly interpolate rows of ``values`` (sampled uniformly on [0, 1]) at ``t``."""
    values = np.asarray(values, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n = values.shape[0]
    pos = np.clip(t, 0.0, 1.0) * (n - 1)
    i0 = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - i0
    if values.ndim == 1:
        return values[i0] * (1.0 - frac) + values[i0 + 1] * frac
    return values[i0] * (1.0 - frac)[:, None] + values[i0 + 1] * frac[:, None]


@dataclass(frozen=True, eq=False)
class Diffeo:
    """Piecewise-linear orientation-preserving bijection of [0, 1].

    ``values[i]`` holds the image of the i-th of M uniformly spaced knots;
    values are strictly increasing with fixed endpoints 0 and 1.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("a warp needs at least two knots")
        if abs(vals[0]) > 1e-9 or abs(vals[-1] - 1.0) > 1e-9:
            raise ValueError("warp endpoints must map 0 to 0 and 1 to 1")
        if np.any(np.diff(vals) <= 0.0):
            raise ValueError("warp knot values must be strictly increasing")
        vals[0] = 0.0
        vals[-1] = 1.0
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def identity(cls, m: int) -> "Diffeo":
        return cls(np.linspace(0.0, 1.0, m))

    @property
    def m(self) -> int:
        return int(self.values.size)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.values.size)

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)

    def derivative(self, t):
        """Exact slope at ``t`` of the piecewise-linear warp (per-cell constant)."""
        m = self.values.size
        slopes = np.diff(self.values) * (m - 1)
        idx = np.clip((np.asarray(t) * (m - 1)).astype(np.int64), 0, m - 2)
        return slopes[idx]

    def inverse_at(self, s):
        """Evaluate the exact piecewise-linear inverse at ``s``."""
        return np.interp(s, self.values, self.grid)

    def inverse(self) -> "Diffeo":
        return Diffeo(np.interp(self.grid, self.values, self.grid))

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.values - self.grid)) <= tol)


def segment_cost(
    y1: np.ndarray,
    y2: np.ndarray,
    i0: int,
    j0: int,
    a: int,
    b: int,
    m: int,
    *,
    plain1: np.ndarray | None = None,
    plain2: np.ndarray | None = None,
    plain_weight: float = 0.0,
    jacobian: bool = True,
) -> float:
    """Local cost of the lattice segment (i0, j0) -> (i0 + a, j0 + b).

    The warp is linear on the segment with slope b/a; the integrand
    ``||y1(u) - r * y2(g(u))||^2 + plain_weight * (p1(u) - p2(g(u)))^2`` with
    ``r = sqrt(b/a)`` (or 1 without the Jacobian factor) is integrated by the
    trapezoidal rule over the a covered grid cells.
    """
    h = 1.0 / (m - 1)
    r = float(np.sqrt(b / a)) if jacobian else 1.0
    total = 0.0
    for p in range(a + 1):
        u = (i0 + p) * h
        g = (j0 + p * b / a) * h
        d = interp_rows(y1, np.array([u]))[0] - r * interp_rows(y2, np.array([g]))[0]
        val = float(np.dot(d, d))
        if plain_weight != 0.0 and plain1 is not None and plain2 is not None:
            dp = interp_rows(plain1, np.array([u]))[0] - interp_rows(plain2, np.array([g]))[0]
            val += plain_weight * float(dp * dp)
        weight = 0.5 if p in (0, a) else 1.0
        total += weight * val
    return total * h


def optimal_warp(
    y1: np.ndarray,
    y2: np.ndarray,
    m: int,
    *,
    plain1: np.ndarray | None = None,
    plain2: np.ndarray | None = None,
    plain_weight: float = 0.0,
    jacobian: bool = True,
    stencil: tuple[tuple[int, int], ...] = DEFAULT_STENCIL,
) -> tuple[Diffeo, float]:
    """Minimum-cost monotone warp aligning ``y2`` onto ``y1``.

    Solves a shortest-path problem on an m-by-m lattice whose admissible
    moves come from ``stencil``, with per-segment costs from
    :func:`segment_cost`. Returns the piecewise-linear warp resampled on m
    uniform knots together with the achieved path cost.
    """
    y1 = np.atleast_2d(np.asarray(y1, dtype=np.float64).T).T
    y2 = np.atleast_2d(np.asarray(y2, dtype=np.float64).T).T
    if m < 2:
        raise ValueError("warp grid needs at least two knots")
    h = 1.0 / (m - 1)
    grid = np.linspace(0.0, 1.0, m)
    f1 = interp_rows(y1, grid)
    use_plain = plain_weight != 0.0 and plain1 is not None and plain2 is not None
    p1 = interp_rows(np.asarray(plain1, dtype=np.float64), grid) if use_plain else None

    # Per-move cost tables E[(a, b)][i - a, j - b] for segments ending at (i, j).
    tables: dict[tuple[int, int], np.ndarray] = {}
    for a, b in stencil:
        if a >= m or b >= m:
            continue
        r = float(np.sqrt(b / a)) if jacobian else 1.0
        ni, nj = m - a, m - b
        acc = np.zeros((ni, nj))
        for p in range(a + 1):
            w = (0.5 if p in (0, a) else 1.0) * h
            rows1 = f1[p : p + ni]
            tpos = (np.arange(nj) + p * b / a) * h
            rows2 = interp_rows(y2, tpos) * r
            diff = rows1[:, None, :] - rows2[None, :, :]
            acc += w * np.einsum("ijk,ijk->ij", diff, diff)
            if use_plain:
                q1 = p1[p : p + ni]
                q2 = interp_rows(np.asarray(plain2, dtype=np.float64), tpos)
                dq = q1[:, None] - q2[None, :]
                acc += w * plain_weight * dq * dq
        tables[(a, b)] = acc

    moves = [mv for mv in stencil if mv in tables]
    big = np.inf
    dist = np.full((m, m), big)
    dist[0, 0] = 0.0
    choice = np.full((m, m), -1, dtype=np.int8)
    for i in range(1, m):
        cand = np.full((len(moves), m), big)
        for idx, (a, b) in enumerate(moves):
            if a > i:
                continue
            cand[idx, b:] = dist[i - a, : m - b] + tables[(a, b)][i - a, :]
        best = np.argmin(cand, axis=0)
        vals = cand[best, np.arange(m)]
        mask = np.isfinite(vals)
        dist[i, mask] = vals[mask]
        choice[i, mask] = best[mask]

    if not np.isfinite(dist[m - 1, m - 1]):
        raise RuntimeError("no admissible warp path on this grid")

    path_i = [m - 1]
    path_j = [m - 1]
    while path_i[-1] > 0 or path_j[-1] > 0:
        a, b = moves[choice[path_i[-1], path_j[-1]]]
        path_i.append(path_i[-1] - a)
        path_j.append(path_j[-1] - b)
    path_i.reverse()
    path_j.reverse()
    values = np.interp(np.arange(m), path_i, np.asarray(path_j, dtype=np.float64)) * h
    return Diffeo(values), float(dist[m - 1, m - 1])
