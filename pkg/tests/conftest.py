"""Shared generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from arbor4d.treemodel import Branch, Tree, resample_branch


def smooth_branch(rng: np.random.Generator, n: int = 60, start=(0.0, 0.0, 0.0), scale: float = 1.0) -> Branch:
    """A smooth random branch resampled to uniform arc length."""
    t = np.linspace(0.0, 1.0, 200)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    coeffs = rng.normal(size=(3, 2))
    envelope = np.column_stack([t * (1 - t), t * t * (1 - t)])
    pts = np.asarray(start) + scale * (np.outer(t, direction) + 0.3 * envelope @ coeffs.T)
    radii = scale * 0.05 * (1.0 - 0.5 * t)
    return resample_branch(Branch(np.column_stack([pts, radii])), n)


def attached_tree(rng: np.random.Generator, depth: int = 2, n: int = 60, start=(0.0, 0.0, 0.0), scale: float = 1.0) -> Tree:
    """Random tree whose children start exactly on the parent skeleton."""
    main = smooth_branch(rng, n, start, scale)
    children = []
    if depth > 1:
        for s in sorted(rng.uniform(0.2, 0.9, size=2)):
            sub = attached_tree(rng, depth - 1, n, main.point_at(s), 0.5 * scale)
            children.append((float(s), sub))
    return Tree(main, tuple(children))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))
