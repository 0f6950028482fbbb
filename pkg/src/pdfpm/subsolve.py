"""Strongly convex min-max subproblem of one PDFPM iteration.

Given the center ``xk``, gradient approximations ``g_j``, PSD scalings ``B_j``
and the nonsmooth parts ``h_j``, find

    argmin_x  max_j [<g_j, x - xk> + 1/2 <B_j (x - xk), x - xk> + h_j(x) - h_j(xk)]
              + sigma/2 ||x - xk||^2.

The max is moved into an epigraph variable ``tau``.  For a box pre-image
support function ``h_j(x) = min{<b_j, w> : A_j^T w = x, w >= 0}`` with
``A_j = [At; -At]`` and ``b_j = delta e``, the dual block is written as
``w_j = (q_j + At^{-T} x, q_j)`` so that the equality constraint holds by
construction and only the sign constraints on both halves remain.  The
result is a smooth convex problem with inequality constraints only, solved
by a feasible-start log-barrier method with damped Newton steps.

Variables are stacked as ``z = (s, tau, q_1, ..., q_r)`` with ``s = x - xk``
and one ``q`` block per robust objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._barrier import INNER_CAP, NOT_FINITE, OK, OUTER_CAP, STALLED, path_follow
from .errors import ConfigurationError, SubproblemFailure
from .model import BoxPreimageSupport, Zero, eval_h

__all__ = [
    "SubproblemData",
    "SubproblemResult",
    "assemble",
    "feasible_start",
    "solve",
    "kkt_residual",
    "psi",
]

ETA = 1e-3
MU = 10.0
MAX_OUTER = 60
MAX_INNER = 100
TIE_TOL = 1e-7
EPS = float(np.finfo(float).eps)
# a stalled path is usable if its gap is this small relative to the objective scale
STALL_GAP = 1e-6
# sign and feasibility slack when verifying the active-set refinement
VERIFY_TOL = 1e-8


@dataclass(frozen=True)
class SubproblemData:
    xk: np.ndarray
    sigma: float
    gradients: np.ndarray  # (m, n)
    scalings: np.ndarray  # (m, n, n)
    nonsmooth: tuple
    hk: np.ndarray  # h_j(xk)
    # robust objectives: index j -> (A_j, b_j) stacked form
    stacked: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.xk.size

    @property
    def m(self):
        return self.gradients.shape[0]

    @property
    def robust(self):
        """Objectives whose h_j needs a dual block (delta = 0 gives h_j = 0)."""
        return [
            j for j, h in enumerate(self.nonsmooth) if isinstance(h, BoxPreimageSupport) and h.delta > 0
        ]


@dataclass
class SubproblemResult:
    xbar: np.ndarray
    tau: float
    gamma: np.ndarray
    w: dict  # j -> dual block in R^{2n}_+ (robust objectives only)
    subgradients: np.ndarray  # (m, n) element of the subdifferential of h_j at xbar
    kkt_residual: float
    objective_value: float
    outer_iterations: int = 0
    inner_iterations: int = 0
    gap: float = 0.0
    step: Optional[np.ndarray] = field(default=None, repr=False)


def assemble(xk, sigma, gradients, scalings, nonsmooth, hk):
    """Validate and pack the data of one subproblem."""
    xk = np.array(xk, dtype=float)
    n = xk.size
    G = np.array(gradients, dtype=float).reshape(-1, n) if len(gradients) else np.empty((0, n))
    m = G.shape[0]
    Bs = np.array(scalings, dtype=float)
    if xk.ndim != 1 or m < 1:
        raise ConfigurationError("need a 1-d center and at least one gradient")
    if Bs.shape != (m, n, n):
        raise ConfigurationError(f"scalings have shape {Bs.shape}, expected {(m, n, n)}")
    nonsmooth = tuple(nonsmooth)
    hk = np.array(hk, dtype=float)
    if len(nonsmooth) != m or hk.shape != (m,):
        raise ConfigurationError("need one nonsmooth part and one h-value per objective")
    if not (sigma > 0 and np.isfinite(sigma)):
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    if not np.all(np.isfinite(hk)) or not np.all(np.isfinite(G)):
        raise ConfigurationError("non-finite gradient or h-value")
    stacked = {}
    for j, h in enumerate(nonsmooth):
        if isinstance(h, BoxPreimageSupport):
            if h.n != n:
                raise ConfigurationError(f"objective {j + 1}: Atilde has wrong size")
            stacked[j] = h.stacked
        elif not isinstance(h, Zero):
            raise ConfigurationError(f"unsupported nonsmooth part {h!r}")
    return SubproblemData(xk, float(sigma), G, Bs, nonsmooth, hk, stacked)


def psi(data, x):
    """Regularized max-model value at x (uses the exact h_j)."""
    s = np.asarray(x, dtype=float) - data.xk
    vals = [
        data.gradients[j] @ s + 0.5 * s @ data.scalings[j] @ s + eval_h(h, x) - data.hk[j]
        for j, h in enumerate(data.nonsmooth)
    ]
    return max(vals) + 0.5 * data.sigma * float(s @ s)


def feasible_start(data):
    """Strictly feasible ``(x0, tau0, w0)`` with ``x0 = xk``."""
    w0 = {}
    cvals = np.zeros(data.m)
    for j in data.stacked:
        h = data.nonsmooth[j]
        u = h.inv_t @ data.xk
        w = np.concatenate([np.maximum(u, 0.0) + ETA, np.maximum(-u, 0.0) + ETA])
        w0[j] = w
        cvals[j] = data.stacked[j][1] @ w - data.hk[j]
    tau0 = float(np.max(cvals)) + 1.0
    return data.xk.copy(), tau0, w0


class _Barrier:
    """Dense representation of the eliminated problem."""

    def __init__(self, data):
        n, m = data.n, data.m
        robust = data.robust
        self.n, self.m = n, m
        self.N = n + 1 + n * len(robust)
        self.sigma = data.sigma
        self.B = np.ascontiguousarray(data.scalings, dtype=float)
        self.qcols = {}
        self.prows = {}
        E0 = np.zeros((m, self.N))
        E0[:, :n] = data.gradients
        E0[:, n] = -1.0
        c0 = -data.hk.copy()
        lin_rows, lin_rhs = [], []
        for r, j in enumerate(robust):
            h = data.nonsmooth[j]
            M = h.inv_t
            cols = slice(n + 1 + r * n, n + 1 + (r + 1) * n)
            self.qcols[j] = cols
            self.prows[j] = slice(2 * n * r + n, 2 * n * (r + 1))
            u0 = M @ data.xk
            E0[j, :n] += h.delta * M.sum(axis=0)
            E0[j, cols] = 2.0 * h.delta
            c0[j] += h.delta * u0.sum()
            # q >= 0
            Aq = np.zeros((n, self.N))
            Aq[:, cols] = -np.eye(n)
            lin_rows.append(Aq)
            lin_rhs.append(np.zeros(n))
            # p = q + u0 + M s >= 0
            Ap = np.zeros((n, self.N))
            Ap[:, cols] = -np.eye(n)
            Ap[:, :n] = -M
            lin_rows.append(Ap)
            lin_rhs.append(u0)
        self.E0, self.c0 = E0, c0
        if lin_rows:
            self.A = np.ascontiguousarray(np.vstack(lin_rows))
            self.b = np.concatenate(lin_rhs)
        else:
            self.A = np.zeros((0, self.N))
            self.b = np.zeros(0)
        self.n_ineq = m + self.A.shape[0]
        self.quad = bool(np.any(self.B))

    def constraints(self, z):
        """Constraint values recomputed from scratch (used once, at the start point)."""
        s = z[: self.n]
        c = self.E0 @ z + 0.5 * ((self.B @ s) @ s) + self.c0
        return c, self.b - self.A @ z

    def magnitudes(self, z):
        """Sums of absolute summands of the constraint values, for rounding bounds."""
        s = np.abs(z[: self.n])
        c = np.abs(self.E0) @ np.abs(z) + 0.5 * ((np.abs(self.B) @ s) @ s) + np.abs(self.c0)
        return c, np.abs(self.b) + np.abs(self.A) @ np.abs(z)

    def scale(self, data):
        """Size of the largest first-order term: gradients plus subgradient bounds."""
        G = float(np.max(np.linalg.norm(data.gradients, axis=1)))
        for j in self.qcols:
            h = data.nonsmooth[j]
            G += h.delta * math.sqrt(h.n) * float(np.linalg.norm(h.inv_t))
        return G


def solve(data, tol=1e-9, t0=1.0):
    """Minimize the subproblem; see the module docstring for the formulation.

    ``tol`` bounds the duality gap relative to the optimal value. Near a
    stationary point the optimal value is tiny compared with the individual
    model terms, and only a relative gap keeps the sign of the predicted
    decrease right. The path is also stopped once the step is determined to
    below the rounding unit of ``xk + s``; nothing finer is representable.

    The barrier point is then refined by an active-set Newton step on the KKT
    equations. The refined point replaces the barrier point only if it passes
    the sign and feasibility checks, which certify it as the exact optimum up
    to rounding.
    """
    prob = _Barrier(data)
    n = data.n
    G = prob.scale(data)
    if G == 0.0:
        # all gradients vanish and no h_j can decrease: s = 0 is optimal
        return _finish_trivial(data)
    _, tau0, w0 = feasible_start(data)
    z = np.zeros(prob.N)
    z[n] = tau0
    for j, cols in prob.qcols.items():
        z[cols] = w0[j][n:]
    c, sl = prob.constraints(z)
    # the optimal value is of order G^2 / sigma
    t = t0 * data.sigma / G**2
    ulp_scale = EPS * max(float(np.linalg.norm(data.xk)), G / data.sigma)
    # strong convexity: ||s - s*||^2 <= 2 gap / sigma
    gap_floor = 0.5 * data.sigma * ulp_scale**2
    z, c, sl, t, outer, inner, status = path_follow(
        z, c, sl, t, prob.E0, prob.B, prob.quad, prob.A, data.sigma, n,
        tol, gap_floor, MU, MAX_OUTER, MAX_INNER,
    )
    objective = z[n] + 0.5 * data.sigma * float(z[:n] @ z[:n])
    gap = prob.n_ineq / t
    if status == STALLED and gap > STALL_GAP * max(-objective, G**2 / data.sigma):
        status = NOT_FINITE
    if status not in (OK, STALLED):
        reason = {
            OUTER_CAP: "barrier outer iteration cap exceeded",
            INNER_CAP: f"Newton iteration cap exceeded at t={t:.3g}",
            NOT_FINITE: f"Newton steps lost accuracy at t={t:.3g}",
        }[status]
        raise SubproblemFailure(reason, last_iterate=data.xk + z[:n])
    gamma = 1.0 / (t * -c)
    omega = 1.0 / (t * sl)
    refined = _crossover(data, prob, z, c, sl, gamma, omega, G)
    if refined is not None:
        z, c, sl, gamma, omega = refined
        gap = 0.0
    return _finish(data, prob, z, sl, gamma, omega, outer, inner, gap)


def _crossover(data, prob, z, c, sl, gamma, omega, G):
    """Newton on the KKT equations of an active set guessed from the barrier point.

    On the central path ``multiplier * slack = 1/t``; a constraint is taken as
    active when its normalized multiplier exceeds its normalized slack. Weakly
    active constraints make this guess ambiguous, so neighbouring guesses
    (prefixes of the objectives ordered by that ratio) are tried as well.
    Returns ``(z, c, sl, gamma, omega)`` or None when no guess verifies.
    """
    obj_scale = G**2 / data.sigma
    score = gamma * obj_scale / np.maximum(-c, np.finfo(float).tiny)
    order = np.argsort(-score, kind="stable")
    k0 = max(1, int(np.sum(score > 1.0)))
    sizes = sorted(range(1, data.m + 1), key=lambda k: (abs(k - k0), -k))
    for k in sizes:
        J = np.sort(order[:k])
        out = _refine(data, prob, z, sl, omega, J, gamma[J], G)
        if out is not None:
            return out
    return None


def _refine(data, prob, z, sl, omega, J, gJ, G, max_steps=12):
    n, N, sigma = data.n, prob.N, data.sigma
    obj_scale = G**2 / sigma
    x_scale = max(float(np.linalg.norm(data.xk)), G / sigma)
    free = np.zeros(N, dtype=bool)
    free[: n + 1] = True
    rows = []
    row_scale = np.ones(sl.size)
    for r, (j, cols) in enumerate(prob.qcols.items()):
        h = data.nonsmooth[j]
        qr = np.arange(2 * n * r, 2 * n * r + n)
        pr = qr + n
        U = float(np.linalg.norm(h.inv_t, 2)) * x_scale
        row_scale[qr] = row_scale[pr] = h.delta
        if j not in J:
            continue
        free[cols] = True
        act_q = omega[qr] / h.delta > sl[qr] / U
        act_p = omega[pr] / h.delta > sl[pr] / U
        # minimizing q_i + p_i with p_i - q_i fixed keeps one of them at zero
        neither = ~(act_q | act_p)
        act_q |= neither & (sl[qr] <= sl[pr])
        act_p |= neither & (sl[pr] < sl[qr])
        rows.extend(qr[act_q])
        rows.extend(pr[act_p])
    R = np.array(sorted(rows), dtype=int)
    fidx = np.flatnonzero(free)
    nf, nJ, nR = fidx.size, J.size, R.size
    # fresh values: the carried ones hold rounding errors from far away on the path
    z = z.copy()
    c, sl = prob.constraints(z)
    gJ = gJ.copy()
    oR = omega[R].copy()
    B, A = prob.B, prob.A
    prev = math.inf
    for _ in range(max_steps):
        s = z[:n]
        E = prob.E0.copy()
        E[:, :n] += B @ s
        grad = np.zeros(N)
        grad[:n] = sigma * s
        grad[n] = 1.0
        grad += gJ @ E[J] + oR @ A[R]
        res = np.concatenate([grad[fidx], c[J], -sl[R]])
        K = np.zeros((nf + nJ + nR,) * 2)
        K[:n, :n] = sigma * np.eye(n) + np.tensordot(gJ, B[J], axes=1)
        EJ = E[np.ix_(J, fidx)]
        AR = A[np.ix_(R, fidx)]
        K[:nf, nf:nf + nJ] = EJ.T
        K[nf:nf + nJ, :nf] = EJ
        K[:nf, nf + nJ:] = AR.T
        K[nf + nJ:, :nf] = AR
        try:
            step = np.linalg.solve(K, -res)
            ok = np.all(np.isfinite(step)) and np.linalg.norm(K @ step + res) <= 1e-8 * np.linalg.norm(res)
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            # degenerate active set: any solution of the consistent system will do
            step = np.linalg.lstsq(K, -res, rcond=None)[0]
        dz = np.zeros(N)
        dz[fidx] = step[:nf]
        z = z + dz
        c, sl = prob.constraints(z)
        gJ = gJ + step[nf:nf + nJ]
        oR = oR + step[nf + nJ:]
        # refine while the primal corrections still contract; then only rounding noise is left
        size = float(np.linalg.norm(step[:nf]))
        if size == 0.0 or size > 0.5 * prev:
            break
        prev = size
    if not np.all(np.isfinite(z)):
        return None
    # inactive robust blocks: the best dual block for the final step
    for r, (j, cols) in enumerate(prob.qcols.items()):
        if j in J:
            continue
        qr = np.arange(2 * n * r, 2 * n * r + n)
        u = sl[qr + n] - z[cols]
        z[cols] = np.maximum(-u, 0.0)
    c, sl = prob.constraints(z)
    # tolerances: a relative part plus the rounding of the summands of each value
    c_tol, sl_tol = prob.magnitudes(z)
    c_tol = VERIFY_TOL * obj_scale + 64 * EPS * c_tol
    sl_tol = VERIFY_TOL * x_scale + 64 * EPS * sl_tol
    inactive_c = np.setdiff1d(np.arange(data.m), J)
    inactive_l = np.setdiff1d(np.arange(sl.size), R)
    if gJ.min() < -VERIFY_TOL or (nR and np.min(oR / row_scale[R]) < -VERIFY_TOL):
        return None
    if np.any(c[inactive_c] > c_tol[inactive_c]) or np.any(sl[inactive_l] < -sl_tol[inactive_l]):
        return None
    # the equations themselves must hold: a least-squares step may not solve them
    s = z[:n]
    E = prob.E0.copy()
    E[:, :n] += B @ s
    grad = np.zeros(N)
    grad[:n] = sigma * s
    grad[n] = 1.0
    grad += gJ @ E[J] + oR @ A[R]
    if np.linalg.norm(grad[fidx]) > VERIFY_TOL * (1.0 + G):
        return None
    if np.any(np.abs(c[J]) > c_tol[J]) or np.any(np.abs(sl[R]) > sl_tol[R]):
        return None
    gamma_new = np.zeros(data.m)
    gamma_new[J] = np.maximum(gJ, 0.0)
    omega_new = np.zeros(sl.size)
    omega_new[R] = np.maximum(oR, 0.0)
    return z, np.minimum(c, 0.0), np.maximum(sl, 0.0), gamma_new, omega_new


def _finish_trivial(data):
    n, m = data.n, data.m
    w = {}
    for j in data.stacked:
        u = data.nonsmooth[j].inv_t @ data.xk
        w[j] = np.concatenate([np.maximum(u, 0.0), np.maximum(-u, 0.0)])
    return SubproblemResult(
        xbar=data.xk.copy(),
        tau=0.0,
        gamma=np.full(m, 1.0 / m),
        w=w,
        subgradients=np.zeros((m, n)),
        kkt_residual=0.0,
        objective_value=0.0,
        step=np.zeros(n),
    )


def _finish(data, prob, z, sl, gamma, omega, outer, inner, gap):
    n = data.n
    s = z[:n]
    xbar = data.xk + s
    lam = np.maximum(gamma, 0.0)
    gamma = lam / lam.sum()
    w = {}
    subgrads = np.zeros((data.m, n))
    for j in set(data.stacked) - set(prob.qcols):
        u = data.nonsmooth[j].inv_t @ xbar
        w[j] = np.concatenate([np.maximum(u, 0.0), np.maximum(-u, 0.0)])
    for j, cols in prob.qcols.items():
        h = data.nonsmooth[j]
        q = z[cols]
        p = sl[prob.prows[j]]
        w[j] = np.concatenate([p, q])
        u = p - q
        nu = h.delta * np.sign(u)
        if lam[j] > 0:
            # multiplier of p >= 0 fixes the maximizer where u = p - q vanishes
            tie = np.abs(u) <= TIE_TOL * max(1.0, float(np.max(np.abs(u))))
            nu_dual = np.clip(h.delta - omega[prob.prows[j]] / lam[j], -h.delta, h.delta)
            nu = np.where(tie, nu_dual, nu)
        subgrads[j] = h.inv_t.T @ nu
    tau = max(
        float(data.gradients[j] @ s + 0.5 * s @ data.scalings[j] @ s + eval_h(h, xbar) - data.hk[j])
        for j, h in enumerate(data.nonsmooth)
    )
    res = SubproblemResult(
        xbar=xbar,
        tau=tau,
        gamma=gamma,
        w=w,
        subgradients=subgrads,
        kkt_residual=np.nan,
        objective_value=tau + 0.5 * data.sigma * float(s @ s),
        outer_iterations=outer,
        inner_iterations=inner,
        gap=gap,  # in objective units; 0 after a verified active-set refinement
        step=s,
    )
    res.kkt_residual = kkt_residual(res, data)
    return res


def kkt_residual(result, data):
    """Norm of ``sum_j gamma_j (g_j + w_j + B_j s) + sigma s`` at the returned point.

    ``s`` is the solved step when the result carries one that rounds to
    ``xbar``. ``xbar - xk`` loses the digits of s below ulp(xk), and sigma
    times that loss can reach O(1).
    """
    s = result.step
    if s is None or not np.array_equal(data.xk + s, result.xbar):
        s = result.xbar - data.xk
    total = data.sigma * s
    for j in range(data.m):
        total = total + result.gamma[j] * (
            data.gradients[j] + result.subgradients[j] + data.scalings[j] @ s
        )
    return float(np.linalg.norm(total))
