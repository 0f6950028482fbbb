"""Robust counterparts of a base problem under box pre-image uncertainty.

Objective j becomes ``f_j(x) + max_{z in Z_j} <x, z>`` with
``Z_j = {z : -delta e <= Atilde_j z <= delta e}``, whose value is
``delta ||Atilde_j^{-T} x||_1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, GenerationError
from .model import BoxPreimageSupport, ProblemSpec, Zero

__all__ = ["UncertaintySpec", "gen_uncertainty", "robustify", "DET_MIN", "MAX_ATTEMPTS"]

DET_MIN = 1e-8
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class UncertaintySpec:
    """Seeded uncertainty matrices, one nonsingular n x n matrix per objective."""

    seed: int
    matrices: tuple
    delta: Optional[float] = None

    def __post_init__(self):
        mats = []
        for M in self.matrices:
            M = np.array(M, dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ConfigurationError(f"uncertainty matrices must be square, got {M.shape}")
            M.setflags(write=False)
            mats.append(M)
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def m(self):
        return len(self.matrices)

    def with_delta(self, delta):
        return UncertaintySpec(self.seed, self.matrices, float(delta))

    def to_config(self):
        return {
            "seed": int(self.seed),
            "delta": self.delta,
            "matrices": [M.tolist() for M in self.matrices],
        }


def gen_uncertainty(seed, n, m, rng=None):
    """Draw m matrices with entries uniform on [0, 1), redrawing any with |det| < 1e-8.

    Draws come from ``numpy.random.default_rng(seed)`` unless a generator is
    passed in, so the result is reproducible from ``(seed, n, m)``.
    """
    if n < 1 or m < 1:
        raise ConfigurationError(f"need n, m >= 1, got n={n}, m={m}")
    if rng is None:
        rng = np.random.default_rng(seed)
    mats = []
    for j in range(m):
        for _ in range(MAX_ATTEMPTS):
            M = rng.random((n, n))
            if abs(np.linalg.det(M)) >= DET_MIN:
                break
        else:
            raise GenerationError(
                f"matrix {j + 1}: {MAX_ATTEMPTS} consecutive draws with |det| < {DET_MIN}"
            )
        mats.append(M)
    return UncertaintySpec(int(seed), tuple(mats))


def robustify(base: ProblemSpec, u: UncertaintySpec, delta) -> ProblemSpec:
    """Attach ``BoxPreimageSupport(Atilde_j, delta)`` to every objective of ``base``.

    With ``delta = 0`` the support function vanishes identically; it is still
    attached so that the structure of the robust problem is kept.
    """
    delta = float(delta)
    if not np.isfinite(delta) or delta < 0:
        raise ConfigurationError(f"delta must be finite and nonnegative, got {delta}")
    if u.m != base.m:
        raise ConfigurationError(f"{u.m} uncertainty matrices for {base.m} objectives")
    if not all(isinstance(h, Zero) for h in base.nonsmooth):
        raise ConfigurationError("base problem already has nonsmooth parts")
    for M in u.matrices:
        if M.shape != (base.n, base.n):
            raise ConfigurationError(f"uncertainty matrix is {M.shape}, expected {(base.n, base.n)}")
    parts = [BoxPreimageSupport(M, delta) for M in u.matrices]
    return base.with_nonsmooth(parts, name=base.name)
