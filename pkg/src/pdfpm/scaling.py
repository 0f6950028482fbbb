"""Scaling matrices B_j of the quadratic model: identity, zero or a BFGS variant.

The BFGS variant skips the update whenever ``s^T y_j < 0`` (no attempt is
made to enforce the curvature condition) and rejects any update whose
Frobenius norm exceeds the bound ``B_bar``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = ["ScalingStrategy", "ScalingState", "init_scaling", "update"]

log = logging.getLogger(__name__)

CURVATURE_TOL = 1e-14


class ScalingStrategy(str, enum.Enum):
    BFGS = "bfgs"
    IDENTITY = "identity"
    ZERO = "zero"


@dataclass(frozen=True)
class ScalingState:
    matrices: tuple
    strategy: ScalingStrategy
    bound: float = 1e4
    rejected: int = 0

    def __getitem__(self, j):
        return self.matrices[j]

    def __len__(self):
        return len(self.matrices)


def init_scaling(n, m, strategy=ScalingStrategy.BFGS, bound=1e4):
    if n < 1 or m < 1:
        raise ConfigurationError("init_scaling needs n, m >= 1")
    strategy = ScalingStrategy(strategy)
    if bound < 0:
        raise ConfigurationError(f"scaling bound must be nonnegative, got {bound}")
    B0 = np.zeros((n, n)) if strategy is ScalingStrategy.ZERO else np.eye(n)
    if np.linalg.norm(B0) > bound:
        raise ConfigurationError(f"initial scaling norm {np.linalg.norm(B0):.3g} exceeds bound {bound}")
    mats = []
    for _ in range(m):
        B = B0.copy()
        B.setflags(write=False)
        mats.append(B)
    return ScalingState(tuple(mats), strategy, float(bound))


def bfgs_variant(B, s, y, bound=np.inf):
    """One BFGS-variant step for a single matrix; returns B itself when skipped."""
    sy = float(s @ y)
    Bs = B @ s
    sBs = float(s @ Bs)
    if sy < 0 or sBs <= CURVATURE_TOL:
        return B
    new = B - np.outer(Bs, Bs) / sBs
    if sy > CURVATURE_TOL:
        new = new + np.outer(y, y) / sy
    new = 0.5 * (new + new.T)
    if np.linalg.norm(new) > bound:
        return B
    new.setflags(write=False)
    return new


def update(state, s, ys):
    """Apply the configured update after an accepted step ``s`` with gradient differences ``ys``."""
    if state.strategy is not ScalingStrategy.BFGS:
        return state
    s = np.asarray(s, dtype=float)
    if len(ys) != len(state):
        raise ConfigurationError(f"expected {len(state)} gradient differences, got {len(ys)}")
    mats = []
    rejected = state.rejected
    for j, (B, y) in enumerate(zip(state.matrices, ys)):
        y = np.asarray(y, dtype=float)
        new = bfgs_variant(B, s, y)
        if new is not B and np.linalg.norm(new) > state.bound:
            log.debug("scaling update for objective %d rejected: ||B||_F=%.3g > %.3g",
                      j + 1, np.linalg.norm(new), state.bound)
            rejected += 1
            new = B
        mats.append(new)
    return ScalingState(tuple(mats), state.strategy, state.bound, rejected)
