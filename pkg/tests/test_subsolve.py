import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdfpm.errors import ConfigurationError
from pdfpm.model import BoxPreimageSupport, Zero, eval_h
from pdfpm.subsolve import assemble, feasible_start, kkt_residual, psi, solve

from conftest import random_nonsingular, random_psd

TOL = 1e-9


def zero_data(G, Bs=None, sigma=1.0, xk=None):
    G = np.atleast_2d(np.asarray(G, dtype=float))
    m, n = G.shape
    Bs = np.zeros((m, n, n)) if Bs is None else np.asarray(Bs, dtype=float)
    xk = np.zeros(n) if xk is None else xk
    return assemble(xk, sigma, G, Bs, [Zero()] * m, np.zeros(m))


def grid_min(data, N=1201, half_width=3.0):
    """Minimum of the max-model plus regularization over an N x N grid (Zero h only)."""
    t = np.linspace(-half_width, half_width, N)
    X, Y = np.meshgrid(t, t, indexing="ij")
    S = np.stack([X.ravel(), Y.ravel()], axis=1)
    val = np.full(len(S), -np.inf)
    for g, B in zip(data.gradients, data.scalings):
        val = np.maximum(val, S @ g + 0.5 * np.einsum("ij,jk,ik->i", S, B, S))
    return float(np.min(val + 0.5 * data.sigma * np.sum(S * S, axis=1)))


def random_instance(rng, m, sigma=2.0, robust=False, n=2):
    G = rng.uniform(-1, 1, (m, n))
    Bs = np.array([random_psd(rng, n) for _ in range(m)])
    xk = rng.normal(size=n) if robust else np.zeros(n)
    hs = [BoxPreimageSupport(random_nonsingular(rng, n), rng.uniform(0.01, 0.5)) if robust else Zero()
          for _ in range(m)]
    return assemble(xk, sigma, G, Bs, hs, [eval_h(h, xk) for h in hs])


def test_single_objective_closed_form():
    data = zero_data([[1.0, 0.0]])
    res = solve(data, TOL)
    assert np.allclose(res.xbar, [-1.0, 0.0], atol=1e-8)
    assert res.tau == pytest.approx(-1.0, abs=1e-8)
    assert np.allclose(res.gamma, [1.0], atol=1e-8)
    assert res.objective_value == pytest.approx(-0.5, abs=1e-8)
    assert kkt_residual(res, data) <= TOL


def test_opposing_gradients_give_zero_step():
    data = zero_data([[1.0, 0.0], [-1.0, 0.0]])
    res = solve(data, TOL)
    assert np.allclose(res.xbar, 0.0, atol=1e-8)
    assert res.tau == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(res.gamma, [0.5, 0.5], atol=1e-8)
    assert kkt_residual(res, data) <= TOL


def test_kkt_residual_of_perturbed_point():
    data = zero_data([[1.0, 0.0]])
    res = solve(data, TOL)
    res.xbar = res.xbar + np.array([0.1, 0.0])
    assert kkt_residual(res, data) == pytest.approx(0.1, abs=1e-6)


def test_assemble_examples():
    data = zero_data([[0.5, -1.0]])
    assert data.m == 1 and data.robust == [] and np.array_equal(data.scalings, np.zeros((1, 2, 2)))
    h = BoxPreimageSupport(np.eye(2), 0.1)
    xk = np.array([0.4, -1.3])
    data = assemble(xk, 1.0, [[1.0, 0.0]], np.zeros((1, 2, 2)), [h], [eval_h(h, xk)])
    A, b = data.stacked[0]
    assert np.array_equal(A, np.vstack([np.eye(2), -np.eye(2)]))
    assert np.array_equal(b, np.full(4, 0.1))
    assert data.hk[0] == eval_h(h, xk)


def test_assemble_rejects_bad_shapes():
    with pytest.raises(ConfigurationError):
        assemble(np.zeros(2), 1.0, [[1.0, 0.0]], np.zeros((1, 3, 3)), [Zero()], [0.0])
    with pytest.raises(ConfigurationError):
        assemble(np.zeros(2), 0.0, [[1.0, 0.0]], np.zeros((1, 2, 2)), [Zero()], [0.0])
    with pytest.raises(ConfigurationError):
        assemble(np.zeros(2), 1.0, [[1.0, 0.0]], np.zeros((1, 2, 2)), [Zero(), Zero()], [0.0])


def test_feasible_start_examples():
    h = BoxPreimageSupport(np.eye(2), 0.2)
    data = assemble(np.zeros(2), 1.0, [[1.0, 0.0]], np.zeros((1, 2, 2)), [h], [0.0])
    x0, tau0, w0 = feasible_start(data)
    eta = 1e-3
    assert np.array_equal(x0, np.zeros(2))
    assert np.allclose(w0[0], eta)
    assert tau0 == pytest.approx(0.2 * 4 * eta + 1.0)
    x0, tau0, w0 = feasible_start(zero_data([[1.0, 2.0], [3.0, 4.0]], xk=np.array([5.0, 6.0])))
    assert np.array_equal(x0, [5.0, 6.0]) and tau0 == 1.0 and w0 == {}


def test_feasible_start_is_interior(rng):
    for _ in range(20):
        data = random_instance(rng, 2, robust=True)
        x0, tau0, w0 = feasible_start(data)
        for j, w in w0.items():
            A, b = data.stacked[j]
            assert np.all(w > 0)
            assert np.allclose(A.T @ w, x0, atol=1e-12)
            assert b @ w - data.hk[j] < tau0


@pytest.mark.parametrize("m", [1, 2, 3])
def test_grid_oracle_example(m):
    rng = np.random.default_rng(100 + m)
    data = random_instance(rng, m)
    res = solve(data, TOL)
    ref = grid_min(data)
    assert res.objective_value <= ref + 1e-12
    assert abs(res.objective_value - ref) <= 1e-3


def test_objective_matches_psi(rng):
    for robust in (False, True):
        for _ in range(20):
            data = random_instance(rng, int(rng.integers(1, 4)), robust=robust)
            res = solve(data, TOL)
            assert res.objective_value == pytest.approx(psi(data, res.xbar), abs=1e-12)


def _check_invariants(data, res):
    assert res.objective_value <= 1e-10
    assert np.min(res.gamma) >= -1e-10 and abs(np.sum(res.gamma) - 1) <= 1e-8
    s = res.xbar - data.xk
    for j, h in enumerate(data.nonsmooth):
        lhs = (data.gradients[j] @ s + 0.5 * s @ data.scalings[j] @ s + 0.5 * data.sigma * s @ s
               + eval_h(h, res.xbar) - data.hk[j])
        assert lhs <= 1e-8
    for j, w in res.w.items():
        A, b = data.stacked[j]
        assert np.all(w >= -1e-10)
        assert np.allclose(A.T @ w, res.xbar, atol=1e-8 * (1 + np.abs(res.xbar).max()))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.booleans(), st.floats(0.1, 1e4))
def test_solution_invariants(seed, m, robust, sigma):
    rng = np.random.default_rng(seed)
    data = random_instance(rng, m, sigma=sigma, robust=robust, n=int(rng.integers(1, 4)))
    res = solve(data, TOL)
    _check_invariants(data, res)
    scale = max(1.0, float(np.abs(data.gradients).max()))
    assert res.kkt_residual <= 1e-6 * scale


def test_doubling_sigma_never_lengthens_step(rng):
    for i in range(100):
        data = random_instance(rng, int(rng.integers(1, 4)), sigma=rng.uniform(0.5, 10), robust=i % 2 == 1)
        r1 = solve(data, TOL)
        d2 = assemble(data.xk, 2 * data.sigma, data.gradients, data.scalings, data.nonsmooth, data.hk)
        r2 = solve(d2, TOL)
        assert np.linalg.norm(r2.xbar - data.xk) <= np.linalg.norm(r1.xbar - data.xk) + TOL


def test_zero_delta_matches_zero_h(rng):
    for _ in range(10):
        data = random_instance(rng, 2)
        hs = [BoxPreimageSupport(random_nonsingular(rng, 2), 0.0) for _ in range(2)]
        d0 = assemble(data.xk, data.sigma, data.gradients, data.scalings, hs, [0.0, 0.0])
        assert np.allclose(solve(d0, TOL).xbar, solve(data, TOL).xbar, atol=1e-8)


def test_robust_instances_match_cvxpy(rng):
    cp = pytest.importorskip("cvxpy")
    for _ in range(15):
        m = int(rng.integers(1, 4))
        data = random_instance(rng, m, sigma=rng.uniform(0.5, 5), robust=True)
        s = cp.Variable(2)
        x = data.xk + s
        terms = [
            data.gradients[j] @ s + 0.5 * cp.quad_form(s, cp.psd_wrap(data.scalings[j]))
            + h.delta * cp.norm1(h.inv_t @ x) - data.hk[j]
            for j, h in enumerate(data.nonsmooth)
        ]
        prob = cp.Problem(cp.Minimize(cp.max(cp.hstack(terms)) + data.sigma / 2 * cp.sum_squares(s)))
        prob.solve(solver=cp.CLARABEL)
        res = solve(data, TOL)
        assert res.objective_value <= prob.value + 1e-7
        assert res.objective_value == pytest.approx(prob.value, abs=1e-6)
        assert np.allclose(res.xbar, data.xk + s.value, atol=1e-4)


def test_all_zero_gradients_give_zero_step():
    res = solve(zero_data(np.zeros((2, 3))), TOL)
    assert np.array_equal(res.xbar, np.zeros(3)) and res.objective_value == 0.0
