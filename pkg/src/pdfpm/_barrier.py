"""Log-barrier path-following kernel for the eliminated subproblem.

The problem has variables ``z`` whose first ``n`` entries form the step ``s``
and whose entry ``n`` is the epigraph variable ``tau``. It reads

    min  tau + sigma/2 ||s||^2
    s.t. c_j(z) = E0_j z + 1/2 s^T B_j s + c0_j < 0,   j = 1..m
         sl(z) = b - A z > 0.

Constraint values are carried along the iteration and updated with their
exact Taylor expansion (linear for ``sl``, quadratic for ``c``) so that small
slacks keep their digits. The functions are compiled with numba when it is
installed; otherwise they run as plain numpy code.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

OK = 0
OUTER_CAP = 1
INNER_CAP = 2
NOT_FINITE = 3
# the Hessian factorization broke down: the path was followed as far as rounding allows
STALLED = 4

ARMIJO = 1e-4
FRACTION_TO_BOUNDARY = 0.99
NEWTON_TOL = 1e-12
QUADRATIC_REGION = 0.25
# below this decrement, failure to contract quadratically means rounding noise
STALL_REGION = 1e-8


@njit(cache=True)
def _phi(z, c, sl, t, sigma, n):
    for v in c:
        if v >= 0.0:
            return math.inf
    for v in sl:
        if v <= 0.0:
            return math.inf
    ss = 0.0
    for i in range(n):
        ss += z[i] * z[i]
    out = t * (z[n] + 0.5 * sigma * ss)
    for v in c:
        out -= math.log(-v)
    for v in sl:
        out -= math.log(v)
    return out


@njit(cache=True)
def _newton(z, c, sl, t, E0, B, quad, A, sigma, n):
    """Newton step of the barrier function and its squared decrement.

    The Hessian ``R + E^T C^-2 E + A^T S^-2 A`` is factored after symmetric
    diagonal scaling, which removes the spread of magnitudes caused by tiny
    slacks. A failed factorization is reported as a NaN decrement.
    """
    m, N = E0.shape
    L = sl.size
    E = E0.copy()
    if quad:
        for j in range(m):
            for i in range(n):
                acc = 0.0
                for k in range(n):
                    acc += B[j, i, k] * z[k]
                E[j, i] += acc
    grad = np.zeros(N)
    H = np.zeros((N, N))
    for i in range(n):
        grad[i] = t * sigma * z[i]
        H[i, i] = t * sigma
    grad[n] = t
    for j in range(m):
        inv = -1.0 / c[j]
        if quad:
            for i in range(n):
                for k in range(n):
                    H[i, k] += inv * B[j, i, k]
        for i in range(N):
            grad[i] += E[j, i] * inv
            ei = E[j, i] * inv
            for k in range(N):
                H[i, k] += ei * E[j, k] * inv
    for r in range(L):
        inv = 1.0 / sl[r]
        for i in range(N):
            ai = A[r, i] * inv
            if ai == 0.0:
                continue
            grad[i] += ai
            for k in range(N):
                H[i, k] += ai * A[r, k] * inv
    d = np.empty(N)
    for i in range(N):
        d[i] = 1.0 / math.sqrt(H[i, i]) if H[i, i] > 0.0 else 1.0
    for i in range(N):
        for k in range(N):
            H[i, k] *= d[i] * d[k]
    g = grad * d
    for i in range(N):
        for k in range(N):
            if not math.isfinite(H[i, k]):
                return np.zeros(N), math.nan, E
    eig_ok = True
    Lc = np.zeros((N, N))
    # Cholesky by hand: numba's cholesky raises on failure instead of reporting it
    for i in range(N):
        for k in range(i + 1):
            acc = H[i, k]
            for l in range(k):
                acc -= Lc[i, l] * Lc[k, l]
            if i == k:
                if acc <= 0.0:
                    eig_ok = False
                    break
                Lc[i, i] = math.sqrt(acc)
            else:
                Lc[i, k] = acc / Lc[k, k]
        if not eig_ok:
            break
    if not eig_ok:
        return np.zeros(N), math.nan, E
    y = np.empty(N)
    for i in range(N):
        acc = -g[i]
        for l in range(i):
            acc -= Lc[i, l] * y[l]
        y[i] = acc / Lc[i, i]
    dec2 = 0.0
    for i in range(N):
        dec2 += y[i] * y[i]
    dz = np.empty(N)
    for i in range(N - 1, -1, -1):
        acc = y[i]
        for l in range(i + 1, N):
            acc -= Lc[l, i] * dz[l]
        dz[i] = acc / Lc[i, i]
    for i in range(N):
        dz[i] *= d[i]
    return dz, dec2, E


@njit(cache=True)
def _max_step(c, sl, d1, d2, Ad):
    amax = math.inf
    for i in range(sl.size):
        if Ad[i] > 0.0:
            amax = min(amax, sl[i] / Ad[i])
    for j in range(c.size):
        cj, a, b = c[j], d1[j], d2[j]
        if b > 0.0:
            disc = math.sqrt(a * a - 2.0 * b * cj)
            root = -2.0 * cj / (a + disc) if a >= 0.0 else (-a + disc) / b
        elif a > 0.0:
            root = -cj / a
        else:
            continue
        amax = min(amax, root)
    return amax


@njit(cache=True)
def path_follow(z, c, sl, t, E0, B, quad, A, sigma, n, tol, gap_floor, mu, max_outer, max_inner):
    """Follow the central path until ``n_ineq / t <= max(tol |objective|, gap_floor)``.

    After the stopping test first holds, one more centering pass at the same
    t runs until Newton stalls, which polishes the multipliers.

    Returns ``(z, c, sl, t, outer, inner_total, status)``; on ``STALLED`` and
    the cap statuses the last iterate is returned unchanged.
    """
    m = c.size
    n_ineq = m + sl.size
    outer = 0
    inner_total = 0
    polish = False
    while True:
        outer += 1
        if outer > max_outer:
            return z, c, sl, t, outer, inner_total, OUTER_CAP
        phi = _phi(z, c, sl, t, sigma, n)
        prev = math.inf
        inner = 0
        while True:
            if inner == max_inner:
                return z, c, sl, t, outer, inner_total, INNER_CAP
            dz, dec2, E = _newton(z, c, sl, t, E0, B, quad, A, sigma, n)
            if not math.isfinite(dec2):
                return z, c, sl, t, outer, inner_total, STALLED
            if dec2 == 0.0 or (dec2 / 2.0 <= NEWTON_TOL and not polish):
                break
            ds = dz[:n]
            d1 = E @ dz
            d2 = np.zeros(m)
            if quad:
                for j in range(m):
                    d2[j] = ds @ (B[j] @ ds)
            Ad = A @ dz
            a = min(1.0, FRACTION_TO_BOUNDARY * _max_step(c, sl, d1, d2, Ad))
            if dec2 < QUADRATIC_REGION:
                # pure Newton: differences of phi are below rounding here
                if dec2 < STALL_REGION and dec2 > 0.25 * prev:
                    break
                z = z + a * dz
                c = c + a * d1 + 0.5 * a * a * d2
                sl = sl - a * Ad
                phi = _phi(z, c, sl, t, sigma, n)
            else:
                accepted = False
                while a > 1e-14:
                    znew = z + a * dz
                    cnew = c + a * d1 + 0.5 * a * a * d2
                    slnew = sl - a * Ad
                    phinew = _phi(znew, cnew, slnew, t, sigma, n)
                    if phinew <= phi - ARMIJO * a * dec2:
                        accepted = True
                        break
                    a *= 0.5
                if not accepted:
                    break
                z, c, sl, phi = znew, cnew, slnew, phinew
            prev = dec2
            inner += 1
            inner_total += 1
        if polish:
            return z, c, sl, t, outer, inner_total, OK
        ss = 0.0
        for i in range(n):
            ss += z[i] * z[i]
        objective = z[n] + 0.5 * sigma * ss
        gap = n_ineq / t
        if gap <= tol * -objective or gap <= gap_floor:
            polish = True
        else:
            t *= mu
