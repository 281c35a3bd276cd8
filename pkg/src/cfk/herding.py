"""Kernel herding from a weighted embedding.

Point ``t`` maximizes ``h(y) - sum_{i<t} l(y~_i, y) / (t + 1)`` where
``h(y) = sum_i beta_i l(y_i, y)``. The argmax runs over a finite candidate
set; ties go to the lowest candidate index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .embedding import WeightedEmbedding
from .kernels import as_points, gram

DEFAULT_GRID_SIZE = 512


@dataclass(frozen=True)
class FixedGrid:
    points: np.ndarray


@dataclass(frozen=True)
class TrainingSupport:
    """Search over the support points of the embedding itself."""


@dataclass(frozen=True)
class GridPlusLocalRefine:
    """Grid argmax followed by coordinate-wise pattern search on the exact objective."""

    grid: np.ndarray
    refine_steps: int = 20


CandidateSearch = Union[FixedGrid, TrainingSupport, GridPlusLocalRefine]


def default_search(embedding: WeightedEmbedding, size: int = DEFAULT_GRID_SIZE) -> CandidateSearch:
    """A 1-D grid over the support padded by one bandwidth, else the training support."""
    if embedding.dim != 1:
        return TrainingSupport()
    pts = embedding.points[:, 0]
    if embedding.kernel.is_shift_invariant:
        pad = embedding.kernel.bandwidth
    else:
        pad = float(np.std(pts)) or 1.0
    return FixedGrid(np.linspace(pts.min() - pad, pts.max() + pad, size))


def _objective(embedding: WeightedEmbedding, herded: list, y: np.ndarray, t: int) -> np.ndarray:
    value = embedding(y)
    if herded:
        value = value - gram(embedding.kernel, y, np.asarray(herded)).sum(axis=1) / (t + 1)
    return value


def _refine(embedding, herded, start, t, steps, step0):
    best = start.copy()
    best_val = _objective(embedding, herded, best[None, :], t)[0]
    step = step0
    for _ in range(steps):
        improved = False
        for j in range(best.shape[0]):
            for sign in (-1.0, 1.0):
                trial = best.copy()
                trial[j] += sign * step
                val = _objective(embedding, herded, trial[None, :], t)[0]
                if val > best_val:
                    best, best_val, improved = trial, val, True
        if not improved:
            step *= 0.5
    return best


def herd(
    embedding: WeightedEmbedding,
    m: int,
    search: Optional[CandidateSearch] = None,
    rng=None,
) -> np.ndarray:
    """Generate ``m`` herded points (shape ``(m, d)``) from ``embedding``.

    ``rng`` is accepted for interface symmetry; every search strategy here is
    deterministic.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if search is None:
        search = default_search(embedding)

    if isinstance(search, TrainingSupport):
        candidates = embedding.points
    elif isinstance(search, (FixedGrid, GridPlusLocalRefine)):
        grid = search.points if isinstance(search, FixedGrid) else search.grid
        candidates = as_points(grid)
    else:
        raise TypeError(f"unknown candidate search {search!r}")
    if candidates.shape[0] == 0:
        raise ValueError("empty candidate set")
    if candidates.shape[1] != embedding.dim:
        raise ValueError("candidate dimension does not match the embedding")

    target = embedding(candidates)
    repulsion = np.zeros(candidates.shape[0])
    herded: list = []
    if isinstance(search, GridPlusLocalRefine) and candidates.shape[0] > 1:
        spacing = np.ptp(candidates, axis=0)
        step0 = float(np.max(spacing)) / candidates.shape[0]
    else:
        step0 = 0.0
    for t in range(1, m + 1):
        objective = target - repulsion / (t + 1) if t > 1 else target
        point = candidates[int(np.argmax(objective))]
        if isinstance(search, GridPlusLocalRefine) and step0 > 0:
            point = _refine(embedding, herded, point, t, search.refine_steps, step0)
        herded.append(point)
        repulsion += gram(embedding.kernel, candidates, point[None, :])[:, 0]
    return np.asarray(herded)
