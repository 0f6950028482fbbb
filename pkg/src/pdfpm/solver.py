"""The PDFPM outer loop.

Each pass computes a difference step ``lambda = eps / (sigma sqrt(n))``,
approximates the gradients of the smooth parts, solves the proximal min-max
subproblem and then either stops (``sigma ||xbar - x|| < eps``), accepts the
trial point (sufficient decrease in every objective) or doubles ``sigma``.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import scaling as scaling_mod
from .errors import ConfigurationError, EvaluationError, SubproblemFailure, UsageError
from .fdgrad import GradientMode, LambdaPolicy, gradient_vector, lambda_step
from .model import ProblemSpec, check_point, eval_hvec, eval_smooth
from .scaling import ScalingStrategy, init_scaling
from .subsolve import assemble, solve

__all__ = [
    "SolverConfig",
    "Status",
    "IterationRecord",
    "RunResult",
    "run",
    "descent_test",
    "stationarity_certificate",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

CERT_FD_STEP = 1e-7
CERT_FD_SLACK = 1e-5


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter_exceeded"
    SUBPROBLEM_FAILED = "subproblem_failed"


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.1
    eps: float = 1e-10
    sigma0: float = 1.0
    max_iter: int = 100
    grad_mode: object = GradientMode.CENTRAL  # one mode or a tuple of modes, one per objective
    lambda_policy: LambdaPolicy = LambdaPolicy()
    b_strategy: ScalingStrategy = ScalingStrategy.BFGS
    b_bound: float = 1e4
    sub_tol: float = 1e-9
    verbose: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.eps < 1:
            raise ConfigurationError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.sigma0 >= 1:
            raise ConfigurationError(f"sigma0 must be at least 1, got {self.sigma0}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be a positive integer, got {self.max_iter}")
        if not self.sub_tol > 0:
            raise ConfigurationError("sub_tol must be positive")
        object.__setattr__(self, "b_strategy", ScalingStrategy(self.b_strategy))
        modes = self.grad_mode
        if isinstance(modes, (str, GradientMode)):
            modes = GradientMode(modes)
        else:
            modes = tuple(GradientMode(mo) for mo in modes)
        object.__setattr__(self, "grad_mode", modes)

    def modes_for(self, m):
        if isinstance(self.grad_mode, GradientMode):
            return [self.grad_mode] * m
        if len(self.grad_mode) != m:
            raise ConfigurationError(f"{len(self.grad_mode)} gradient modes for {m} objectives")
        return list(self.grad_mode)

    def to_dict(self):
        modes = self.grad_mode
        return {
            "alpha": self.alpha,
            "eps": self.eps,
            "sigma0": self.sigma0,
            "max_iter": self.max_iter,
            "grad_mode": modes.value if isinstance(modes, GradientMode) else [mo.value for mo in modes],
            "lambda_floor": self.lambda_policy.floor,
            "lambda_cap": self.lambda_policy.cap,
            "b_strategy": self.b_strategy.value,
            "b_bound": self.b_bound,
            "sub_tol": self.sub_tol,
        }


@dataclass
class IterationRecord:
    k: int
    sigma: float
    lam: float
    x: np.ndarray
    F: np.ndarray
    norm_s: float
    accepted: bool
    gamma: np.ndarray
    kkt_residual: float
    F_trial: Optional[np.ndarray] = None
    lambda_flagged: bool = False
    sub_outer: int = 0
    sub_inner: int = 0
    min_decrease_met: Optional[bool] = None


@dataclass
class RunResult:
    status: Status
    x: np.ndarray
    F: np.ndarray
    iterations: list = field(default_factory=list)
    sigma_doublings: int = 0
    certificate: Optional[float] = None
    sigma_final: float = math.nan
    accepted_steps: int = 0
    b_bound: float = 1e4
    message: str = ""
    # data of the final subproblem, kept for the stationarity certificate
    final_gamma: Optional[np.ndarray] = None
    final_subgradients: Optional[np.ndarray] = None

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    @property
    def subproblem_solves(self):
        return len(self.iterations)


def descent_test(F_old, F_new, alpha, eps, sigma):
    """Sufficient decrease ``F_new <= F_old - alpha eps^2 / (2 sigma)`` in every component.

    The comparison is made on the difference ``F_old - F_new``, which is exact
    in floating point for nearby values. Writing it as ``F_old - d`` would let
    the tiny required decrease ``d`` vanish in rounding, so an unchanged F
    would pass.
    """
    F_old = np.asarray(F_old, dtype=float)
    F_new = np.asarray(F_new, dtype=float)
    return bool(np.all(F_old - F_new >= alpha * eps**2 / (2.0 * sigma)))


def _min_decrease(problem, config):
    """Per-objective guaranteed decrease from the regularity constants, if known."""
    metas = [f.holder_meta for f in problem.smooth]
    if any(mt is None for mt in metas):
        return None
    beta = min(mt.beta for mt in metas)
    # constant of the minimum-reduction bound, built from the largest L_j, M_j
    L = max(mt.L for mt in metas)
    M = max(mt.M for mt in metas)
    c = max(L, M, config.b_bound, 1.0)
    return config.alpha * config.eps ** ((beta + 1.0) / beta) / (2.0 * c)


def run(problem: ProblemSpec, x0, config: SolverConfig = SolverConfig()) -> RunResult:
    """Run the method from x0."""
    x = check_point(problem, x0)
    n, m = problem.n, problem.m
    modes = config.modes_for(m)
    for j, (f, mode) in enumerate(zip(problem.smooth, modes)):
        if mode is GradientMode.ANALYTIC and f.analytic_grad is None:
            raise ConfigurationError(f"objective {j + 1} has no analytic gradient")
    try:
        hx = eval_hvec(problem, x)
        Fx = eval_smooth(problem, x) + hx
    except EvaluationError as exc:
        raise ConfigurationError(f"F is not finite at the starting point: {exc}") from None

    B = init_scaling(n, m, config.b_strategy, config.b_bound)
    sigma = float(config.sigma0)
    min_dec = _min_decrease(problem, config)
    records = []
    doublings = 0
    accepted = 0
    max_solves = 10 * config.max_iter
    grad_cache = {}

    def grads_at(point, lam):
        key = (point.tobytes(), lam)
        if key not in grad_cache:
            grad_cache.clear()
            grad_cache[key] = gradient_vector(problem, point, lam, modes)
        return grad_cache[key]

    def finish(status, point, Fp, message="", sub=None):
        res = RunResult(
            status=status,
            x=point,
            F=Fp,
            iterations=records,
            sigma_doublings=doublings,
            sigma_final=sigma,
            accepted_steps=accepted,
            b_bound=config.b_bound,
            message=message,
        )
        if sub is not None:
            res.final_gamma = sub.gamma
            res.final_subgradients = sub.subgradients
        if status is Status.CONVERGED:
            res.certificate = stationarity_certificate(res, problem)
        log.info("run finished: %s after %d accepted steps, %d subproblems, sigma=%.3g",
                 status.value, accepted, len(records), sigma)
        return res

    while True:
        if accepted >= config.max_iter or len(records) >= max_solves:
            return finish(Status.MAX_ITER, x, Fx, "iteration limit reached")
        lam, flagged, _ = lambda_step(config.eps, sigma, n, config.lambda_policy)
        g = grads_at(x, lam)
        data = assemble(x, sigma, g, np.stack(B.matrices), problem.nonsmooth, hx)
        try:
            sub = solve(data, config.sub_tol)
        except SubproblemFailure as exc:
            return finish(Status.SUBPROBLEM_FAILED, x, Fx, str(exc))
        xbar = sub.xbar
        norm_s = float(np.linalg.norm(xbar - x))
        rec = IterationRecord(
            k=accepted,
            sigma=sigma,
            lam=lam,
            x=x,
            F=Fx,
            norm_s=norm_s,
            accepted=False,
            gamma=sub.gamma,
            kkt_residual=sub.kkt_residual,
            lambda_flagged=flagged,
            sub_outer=sub.outer_iterations,
            sub_inner=sub.inner_iterations,
        )
        records.append(rec)
        if config.verbose:
            log.info("k=%d sigma=%.3g lambda=%.3g |s|=%.3g F=%s", accepted, sigma, lam, norm_s, Fx)
        if sigma * norm_s < config.eps:
            try:
                Fbar = eval_smooth(problem, xbar) + eval_hvec(problem, xbar)
            except EvaluationError as exc:
                return finish(Status.SUBPROBLEM_FAILED, x, Fx, f"F not finite at the solution: {exc}")
            return finish(Status.CONVERGED, xbar, Fbar, sub=sub)
        try:
            hbar = eval_hvec(problem, xbar)
            Fbar = eval_smooth(problem, xbar) + hbar
        except EvaluationError:
            Fbar = np.full(m, np.inf)
        rec.F_trial = Fbar
        if descent_test(Fx, Fbar, config.alpha, config.eps, sigma):
            rec.accepted = True
            if min_dec is not None:
                rec.min_decrease_met = bool(np.all(Fx - Fbar >= min_dec))
            if B.strategy is ScalingStrategy.BFGS:
                # same mode and the same lambda (sigma is unchanged) at both points
                g_new = grads_at(xbar, lam)
                B = scaling_mod.update(B, xbar - x, [gn - go for gn, go in zip(g_new, g)])
            x, hx, Fx = xbar, hbar, Fbar
            accepted += 1
        else:
            sigma *= 2.0
            doublings += 1


def best_gradient(f, x):
    if f.analytic_grad is not None:
        return np.asarray(f.analytic_grad(x), dtype=float)
    from .fdgrad import approx_grad

    return approx_grad(f.eval, x, CERT_FD_STEP, GradientMode.CENTRAL)


def stationarity_certificate(result: RunResult, problem: ProblemSpec) -> float:
    """``||sum_j gamma_j (grad f_j(x*) + w_j)||`` at the returned point.

    Uses analytic gradients when available and central differences with step
    1e-7 otherwise; ``gamma`` and ``w_j`` come from the final subproblem.
    """
    if result.status is not Status.CONVERGED or result.final_gamma is None:
        raise UsageError("stationarity certificate requires a converged run")
    total = np.zeros(problem.n)
    for j, f in enumerate(problem.smooth):
        total += result.final_gamma[j] * (best_gradient(f, result.x) + result.final_subgradients[j])
    return float(np.linalg.norm(total))


def certificate_bound(result: RunResult, eps: float, fd_slack: float = CERT_FD_SLACK) -> float:
    """Upper bound on the certificate expected for a genuinely converged run."""
    return (1.0 + result.b_bound / result.sigma_final) * eps + fd_slack


TRACE_COLUMNS = ["k", "sigma", "lambda", "accepted", "norm_s"]


def write_trace_csv(result: RunResult, path) -> None:
    """One row per subproblem solve: k, sigma, lambda, accepted, norm_s, F_1..F_m, gamma_1..gamma_m."""
    m = len(result.F)
    header = TRACE_COLUMNS + [f"F_{j + 1}" for j in range(m)] + [f"gamma_{j + 1}" for j in range(m)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in result.iterations:
            w.writerow(
                [r.k, repr(r.sigma), repr(r.lam), int(r.accepted), repr(r.norm_s)]
                + [repr(float(v)) for v in r.F]
                + [repr(float(v)) for v in r.gamma]
            )
