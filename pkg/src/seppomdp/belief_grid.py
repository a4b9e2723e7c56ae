"""Finite belief grids built from simulated belief trajectories.

Beliefs visited along a long passive simulation are floored to ``d`` digits;
the ``K`` most visited cells become the grid. Each grid point is the mean of
the beliefs that fell in its cell, so it is a proper distribution (the floored
label usually is not).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hmm import (
    HiddenMarkovModel,
    InvalidArgumentError,
    _joint_update,
    _Sampler,
    as_belief,
)


def simulate_belief_trajectory(
    model: HiddenMarkovModel, b0, n_steps: int, seed: int, restarts: int = 1
) -> np.ndarray:
    """Simulate observations from ``model`` and filter them; returns ``b_1 .. b_N``.

    With ``restarts > 1`` the ``n_steps`` budget is split over independent
    chains, each started from ``b0``.
    """
    b0 = as_belief(b0, model.n_states)
    if n_steps < 1 or restarts < 1:
        raise InvalidArgumentError("n_steps and restarts must be >= 1")
    rng = np.random.default_rng(seed)
    sampler = _Sampler(model)
    lengths = np.full(restarts, n_steps // restarts)
    lengths[: n_steps % restarts] += 1
    out = np.empty((n_steps, model.n_states))
    row = 0
    Ef = model.flat_emission
    for length in lengths:
        r = rng.random(1 + 2 * length)
        u = sampler.initial(b0, r[:1])
        b = b0[None, :]
        for t in range(length):
            u, o = sampler.step(u, r[1 + 2 * t : 2 + 2 * t], r[2 + 2 * t : 3 + 2 * t])
            post = _joint_update(model, b, Ef[:, o].T)
            b = post / post.sum()
            out[row] = b[0]
            row += 1
    return out


def _labels(beliefs: np.ndarray, d: int) -> np.ndarray:
    return np.floor(np.asarray(beliefs, dtype=float) * 10**d).astype(np.int64)


def round_belief(b, d: int) -> np.ndarray:
    """Componentwise floor to ``d`` digits. The result is a label, not a distribution."""
    if d < 1:
        raise InvalidArgumentError("d must be >= 1")
    return _labels(b, d) / 10**d


@dataclass(frozen=True, eq=False)
class BeliefGrid:
    points: np.ndarray
    d: int
    K: int
    visit_counts: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n_states(self) -> int:
        return self.points.shape[1]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "K": self.K,
            "points": self.points.tolist(),
            "visit_counts": self.visit_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BeliefGrid":
        pts = np.asarray(data["points"], dtype=float)
        return cls(pts, int(data["d"]), int(data["K"]), np.asarray(data["visit_counts"], dtype=int), _labels(pts, int(data["d"])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "BeliefGrid":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_grid(beliefs, d: int, K: int) -> BeliefGrid:
    """Keep the ``K`` most visited ``d``-digit cells; ties go to the lexicographically smaller label."""
    B = np.atleast_2d(np.asarray(beliefs, dtype=float))
    if B.shape[0] == 0:
        raise InvalidArgumentError("beliefs must be nonempty")
    if K < 1 or d < 1:
        raise InvalidArgumentError("K and d must be >= 1")
    labels = _labels(B, d)
    uniq, inverse, counts = np.unique(labels, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(-counts, kind="stable")[:K]
    sums = np.zeros((uniq.shape[0], B.shape[1]))
    np.add.at(sums, inverse, B)
    reps = sums[order] / counts[order, None]
    reps /= reps.sum(axis=1, keepdims=True)
    return BeliefGrid(reps, d, K, counts[order].astype(int), uniq[order])


def sup_distances(grid: BeliefGrid, beliefs) -> np.ndarray:
    """Sup-norm distances, shape ``(len(beliefs), len(grid))``."""
    B = np.atleast_2d(np.asarray(beliefs, dtype=float))
    return np.abs(B[:, None, :] - grid.points[None, :, :]).max(axis=2)


def nearest_grid_points(grid: BeliefGrid, beliefs) -> np.ndarray:
    """Vectorized :func:`nearest_grid_point`."""
    if len(grid) == 0:
        raise InvalidArgumentError("grid is empty")
    return np.argmin(sup_distances(grid, beliefs), axis=1)


def nearest_grid_point(grid: BeliefGrid, b) -> int:
    """Index of the sup-norm nearest grid point; ties go to the smallest index."""
    return int(nearest_grid_points(grid, np.asarray(b, dtype=float)[None, :])[0])
