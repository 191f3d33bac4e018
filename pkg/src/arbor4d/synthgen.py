"""Seeded synthetic 3D/4D tree generation and perturbation tools.

All random draws come from a PCG64 generator consumed in a fixed depth-first
order, so equal seeds produce bit-identical objects on any platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .treemodel import Branch, Tree, Tree4D, resample_branch
from .warps import Diffeo

SPEC_FORMAT = "arbor4d-spec/1"

TimeWarp = Diffeo


@dataclass(frozen=True)
class GrowthSpec:
    """Parameters of the synthetic generator."""

    depth: int = 3
    children: tuple[int, int] = (2, 3)
    branch_length: tuple[float, float] = (0.6, 1.0)
    radius: tuple[float, float] = (0.03, 0.06)
    curvature: float = 0.25
    frames: int = 8
    growth: float = 1.0
    births: int = 0
    birth_schedule: tuple[tuple[str, int], ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.depth <= 6:
            raise ValueError("depth must be in 1..6")
        lo, hi = self.children
        if lo < 0 or hi < lo:
            raise ValueError("invalid children range")
        for name in ("branch_length", "radius"):
            lo, hi = getattr(self, name)
            if lo <= 0.0 or hi < lo:
                raise ValueError(f"invalid {name} range")
        if self.curvature < 0.0:
            raise ValueError("curvature must be nonnegative")
        if self.frames < 2:
            raise ValueError("need at least two frames")
        if self.births < 0:
            raise ValueError("births must be nonnegative")
        object.__setattr__(self, "children", tuple(int(v) for v in self.children))
        object.__setattr__(
            self, "birth_schedule", tuple((str(p), int(f)) for p, f in self.birth_schedule)
        )


def parse_spec(data: bytes | str) -> GrowthSpec:
    obj = json.loads(data)
    if obj.get("format") != SPEC_FORMAT:
        raise ValueError(f"expected {SPEC_FORMAT!r} document")
    return GrowthSpec(
        depth=int(obj.get("depth", 3)),
        children=tuple(obj.get("children", (2, 3))),
        branch_length=tuple(obj.get("branch_length", (0.6, 1.0))),
        radius=tuple(obj.get("radius", (0.03, 0.06))),
        curvature=float(obj.get("curvature", 0.25)),
        frames=int(obj.get("frames", 8)),
        growth=float(obj.get("growth", 1.0)),
        births=int(obj.get("births", 0)),
        birth_schedule=tuple((str(p), int(f)) for p, f in obj.get("birth_schedule", [])),
        seed=int(obj.get("seed", 0)),
    )


def serialize_spec(spec: GrowthSpec) -> bytes:
    doc = {
        "format": SPEC_FORMAT,
        "depth": spec.depth,
        "children": list(spec.children),
        "branch_length": list(spec.branch_length),
        "radius": list(spec.radius),
        "curvature": spec.curvature,
        "frames": spec.frames,
        "growth": spec.growth,
        "births": spec.births,
        "birth_schedule": [[p, f] for p, f in spec.birth_schedule],
        "seed": spec.seed,
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


# ---------------------------------------------------------------------------
# Blueprints: all randomness is drawn once, frames are deterministic functions


@dataclass(frozen=True)
class _BranchPlan:
    direction: np.ndarray
    length: float
    radius0: float
    wiggle: np.ndarray  # (2, 2) cubic-envelope coefficients for two normals
    bend_scale: float  # growth of the wiggle field over time
    s_values: tuple[float, ...]
    children: tuple["_BranchPlan", ...]
    path: str
    birth: int = 0


def _orthonormal(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(direction, ref)) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(direction, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(direction, u)


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (
        v * np.cos(angle)
        + np.cross(axis, v) * np.sin(angle)
        + axis * np.dot(axis, v) * (1.0 - np.cos(angle))
    )


def _plan_branch(rng: np.random.Generator, spec: GrowthSpec, direction, level: int, path: str) -> _BranchPlan:
    scale = 0.62**level
    length = scale * rng.uniform(*spec.branch_length)
    radius0 = scale * rng.uniform(*spec.radius)
    wiggle = rng.uniform(-1.0, 1.0, size=(2, 2))
    bend_scale = float(rng.uniform(0.3, 1.0))
    children = []
    s_values: tuple[float, ...] = ()
    if level + 1 < spec.depth:
        lo, hi = spec.children
        count = int(rng.integers(lo, hi + 1))
        raw_s = np.sort(rng.uniform(0.15, 0.9, size=count))
        kids = []
        for ci in range(count):
            angle = rng.uniform(0.5, 1.1)
            azimuth = rng.uniform(0.0, 2.0 * np.pi)
            u, v = _orthonormal(direction)
            lateral = np.cos(azimuth) * u + np.sin(azimuth) * v
            child_dir = _rotate_about(direction, np.cross(direction, lateral), angle)
            child_dir /= np.linalg.norm(child_dir)
            kids.append(_plan_branch(rng, spec, child_dir, level + 1, f"{path}/{ci}"))
        children = kids
        s_values = tuple(float(s) for s in raw_s)
    return _BranchPlan(
        direction=direction,
        length=length,
        radius0=radius0,
        wiggle=wiggle,
        bend_scale=bend_scale,
        s_values=s_values,
        children=tuple(children),
        path=path,
    )


def _assign_births(plan: _BranchPlan, rng: np.random.Generator, spec: GrowthSpec) -> _BranchPlan:
    schedule = dict(spec.birth_schedule)
    paths: list[str] = []

    def collect(p: _BranchPlan) -> None:
        for c in p.children:
            paths.append(c.path)
            collect(c)

    collect(plan)
    if spec.births > 0 and paths:
        chosen = rng.choice(len(paths), size=min(spec.births, len(paths)), replace=False)
        for idx in np.sort(chosen):
            frame = int(rng.integers(1, spec.frames))
            schedule.setdefault(paths[int(idx)], frame)

    def apply(p: _BranchPlan) -> _BranchPlan:
        birth = schedule.get(p.path, 0)
        kids = tuple(apply(c) for c in p.children)
        return replace(p, birth=birth, children=kids)

    return apply(plan)


def _materialize(
    plan: _BranchPlan,
    start: np.ndarray,
    spec: GrowthSpec,
    n: int,
    sigma: float,
    sigma0: float,
    frame: int,
    frames: int,
    *,
    ramp: float = 1.0,
) -> Tree:
    t = np.linspace(0.0, 1.0, n)
    u, v = _orthonormal(plan.direction)
    env0 = t * (1.0 - t)
    env1 = t * t * (1.0 - t)
    amp = spec.curvature * plan.length
    offs = (
        np.outer(env0 * plan.wiggle[0, 0] + env1 * plan.wiggle[0, 1], u)
        + np.outer(env0 * plan.wiggle[1, 0] + env1 * plan.wiggle[1, 1], v)
    ) * amp
    # The wiggle field is orthogonal to the branch axis, so growing it can
    # only lengthen the curve; the gain vanishes when growth is zero.
    gain = 1.0 + plan.bend_scale * (sigma - sigma0)
    scale = sigma * ramp
    pts = start + scale * (np.outer(t, plan.direction * plan.length) + gain * offs)
    radii = scale * plan.radius0 * (1.0 - 0.6 * t)
    branch = resample_branch(Branch(np.column_stack([pts, radii])), n)
    kids = []
    for s, child in zip(plan.s_values, plan.children):
        if child.birth > frame:
            continue
        child_ramp = 1.0
        if child.birth > 0:
            child_ramp = ((frame - child.birth + 1) / (frames - child.birth)) ** 0.7
            child_ramp = min(child_ramp, 1.0)
        attach = branch.point_at(s)
        kids.append(
            (s, _materialize(child, attach, spec, n, sigma, sigma0, frame, frames, ramp=ramp * child_ramp))
        )
    return Tree(branch, tuple(kids))


def _growth_factor(spec: GrowthSpec, t: float) -> float:
    return (0.35 + 0.65 * t) ** spec.growth


def gen_tree(spec: GrowthSpec, seed: int | None = None, *, samples: int = 100) -> Tree:
    """Deterministic random tree: bent branches, tapered radii, random junctions."""
    rng = np.random.Generator(np.random.PCG64(spec.seed if seed is None else seed))
    plan = _plan_branch(rng, spec, np.array([0.0, 0.0, 1.0]), 0, "0")
    return _materialize(plan, np.zeros(3), spec, samples, 1.0, 1.0, 0, spec.frames)


def gen_tree4d(spec: GrowthSpec, seed: int | None = None, *, samples: int = 100) -> Tree4D:
    """Deterministic growing sequence; see :func:`gen_tree` for the geometry.

    Frames share their branching structure except for scheduled births;
    branch lengths and radii scale monotonically with the growth exponent.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed if seed is None else seed))
    plan = _plan_branch(rng, spec, np.array([0.0, 0.0, 1.0]), 0, "0")
    plan = _assign_births(plan, rng, spec)
    times = np.linspace(0.0, 1.0, spec.frames)
    sigma0 = _growth_factor(spec, 0.0)
    frames = []
    for idx, tt in enumerate(times):
        sigma = _growth_factor(spec, float(tt))
        frames.append(_materialize(plan, np.zeros(3), spec, samples, sigma, sigma0, idx, spec.frames))
    return Tree4D(times, tuple(frames))


# ---------------------------------------------------------------------------
# Random time warps


def random_diffeo(seed: int, roughness: float, knots: int = 33) -> TimeWarp:
    """Random warp from normalized positive increments.

    Increments are Gamma(1 / roughness^2) draws, so the sup-distance to the
    identity scales like the roughness; roughness must lie in (0, 1].
    """
    if not 0.0 < roughness <= 1.0:
        raise ValueError("roughness must be in (0, 1]")
    if knots < 3:
        raise ValueError("need at least three knots")
    rng = np.random.Generator(np.random.PCG64(seed))
    alpha = 1.0 / roughness**2
    incr = rng.gamma(alpha, 1.0, size=knots - 1) + 1e-12
    values = np.concatenate([[0.0], np.cumsum(incr)])
    return Diffeo(values / values[-1])


def _blend_trees(a: Tree, b: Tree, weight: float) -> Tree:
    """Convex combination of two frames sharing a topology.

    A subtree present on one side only shrinks toward a degenerate branch at
    its attachment point (covers frames straddling a branch birth).
    """
    samples = (1.0 - weight) * a.main.samples + weight * b.main.samples
    main = Branch(samples)
    kids = []
    # Children are s-sorted; pair them by bifurcation parameter so a branch
    # born between the two frames meets its degenerate counterpart.
    ia = ib = 0
    while ia < len(a.children) or ib < len(b.children):
        sa = a.children[ia][0] if ia < len(a.children) else None
        sb = b.children[ib][0] if ib < len(b.children) else None
        if sa is not None and sb is not None and abs(sa - sb) < 1e-9:
            suba, subb = a.children[ia][1], b.children[ib][1]
            kids.append(((1.0 - weight) * sa + weight * sb, _blend_trees(suba, subb, weight)))
            ia += 1
            ib += 1
        elif sb is None or (sa is not None and sa < sb):
            suba = a.children[ia][1]
            kids.append((sa, _blend_trees(suba, _degenerate_like(suba), weight)))
            ia += 1
        else:
            subb = b.children[ib][1]
            kids.append((sb, _blend_trees(_degenerate_like(subb), subb, weight)))
            ib += 1
    return Tree(main, tuple(kids))


def _degenerate_like(t: Tree) -> Tree:
    pts = np.tile(np.append(t.main.points[0], 0.0), (t.main.n, 1))
    kids = tuple((s, _degenerate_like(sub)) for s, sub in t.children)
    return Tree(Branch(pts), kids)


def warp_tree4d(h: Tree4D, warp: TimeWarp) -> Tree4D:
    """Resample the sequence at the warped uniform grid, blending frames."""
    grid = np.linspace(0.0, 1.0, h.n_frames)
    new_frames = []
    for u in warp(grid):
        j = int(np.searchsorted(h.times, u, side="right") - 1)
        j = min(max(j, 0), h.n_frames - 2)
        wgt = (u - h.times[j]) / (h.times[j + 1] - h.times[j])
        wgt = min(max(wgt, 0.0), 1.0)
        if wgt == 0.0:
            new_frames.append(h.frames[j])
        elif wgt == 1.0:
            new_frames.append(h.frames[j + 1])
        else:
            new_frames.append(_blend_trees(h.frames[j], h.frames[j + 1], wgt))
    return Tree4D(grid, tuple(new_frames))
