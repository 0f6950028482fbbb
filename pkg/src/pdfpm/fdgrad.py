"""Finite-difference gradients of the smooth parts and the step-size rule."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, EvaluationError

__all__ = ["GradientMode", "LambdaPolicy", "LambdaStep", "lambda_step", "approx_grad", "gradient_vector"]

# sqrt of the double-precision unit roundoff
CANCELLATION_THRESHOLD = 2.0**-26


class GradientMode(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    CENTRAL = "central"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class LambdaPolicy:
    floor: float = 0.0
    cap: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.floor <= self.cap:
            raise ConfigurationError(f"need 0 <= floor <= cap, got floor={self.floor}, cap={self.cap}")


class LambdaStep(NamedTuple):
    value: float
    flagged: bool
    bound_violated: bool


def lambda_step(eps, sigma, n, policy=LambdaPolicy()):
    """Difference step ``eps / (sigma sqrt(n))`` clamped to the policy bounds.

    ``flagged`` is raised when the floor pushed the step above the bound
    (``bound_violated``) or when the step is so small that differences of f
    lose about half of their significant digits.
    """
    if eps <= 0 or sigma <= 0 or n < 1:
        raise ConfigurationError("lambda_step needs eps > 0, sigma > 0, n >= 1")
    bound = eps / (sigma * math.sqrt(n))
    lam = max(min(bound, policy.cap), policy.floor)
    violated = policy.floor > bound
    return LambdaStep(lam, violated or lam < CANCELLATION_THRESHOLD, violated)


def _checked(f, x):
    v = f(x)
    if not np.isfinite(v):
        raise EvaluationError(f"oracle returned {v} at x={x}", x=x)
    return float(v)


def approx_grad(f, x, lam, mode=GradientMode.CENTRAL, fx=None):
    """Forward, backward or central difference gradient of scalar f at x.

    ``fx`` may carry an already computed f(x) for the one-sided modes.
    """
    mode = GradientMode(mode)
    if mode is GradientMode.ANALYTIC:
        raise ConfigurationError("approx_grad does not handle analytic mode")
    if not lam > 0:
        raise ConfigurationError(f"lambda must be positive, got {lam}")
    x = np.array(x, dtype=float)
    n = x.size
    g = np.empty(n)
    if mode is GradientMode.CENTRAL:
        for i in range(n):
            xp = x.copy()
            xp[i] += lam
            xm = x.copy()
            xm[i] -= lam
            g[i] = (_checked(f, xp) - _checked(f, xm)) / (2.0 * lam)
        return g
    f0 = _checked(f, x) if fx is None else float(fx)
    for i in range(n):
        xs = x.copy()
        if mode is GradientMode.FORWARD:
            xs[i] += lam
            g[i] = (_checked(f, xs) - f0) / lam
        else:
            xs[i] -= lam
            g[i] = (f0 - _checked(f, xs)) / lam
    return g


def gradient_vector(problem, x, lam, modes):
    """Gradient approximations of every smooth part f_j at x.

    ``modes`` is a single mode or one mode per objective.
    """
    if isinstance(modes, (str, GradientMode)):
        modes = [modes] * problem.m
    if len(modes) != problem.m:
        raise ConfigurationError(f"expected {problem.m} gradient modes, got {len(modes)}")
    x = np.asarray(x, dtype=float)
    out = []
    for j, (f, mode) in enumerate(zip(problem.smooth, modes)):
        mode = GradientMode(mode)
        if mode is GradientMode.ANALYTIC:
            if f.analytic_grad is None:
                raise ConfigurationError(f"objective {j + 1} has no analytic gradient")
            g = np.asarray(f.analytic_grad(x), dtype=float)
            if not np.all(np.isfinite(g)):
                raise EvaluationError(f"analytic gradient of f_{j + 1} is not finite", index=j, x=x)
        else:
            try:
                g = approx_grad(f.eval, x, lam, mode)
            except EvaluationError as exc:
                raise EvaluationError(str(exc), index=j, x=x) from None
        out.append(g)
    return out
