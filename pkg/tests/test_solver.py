import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdfpm.errors import ConfigurationError, UsageError
from pdfpm.fdgrad import LambdaPolicy
from pdfpm.model import HolderMeta, ProblemSpec, SmoothObjective, Zero, least_squares, make_aas1, make_aas2
from pdfpm.robust import gen_uncertainty, robustify
from pdfpm.solver import (
    RunResult,
    SolverConfig,
    Status,
    certificate_bound,
    descent_test,
    run,
    stationarity_certificate,
    write_trace_csv,
)


def half_square():
    f = SmoothObjective(eval=lambda x: 0.5 * float(x @ x), analytic_grad=lambda x: np.array(x, dtype=float))
    return ProblemSpec(1, ((f, Zero()),), [[-1, 1]])


def test_one_dimensional_quadratic():
    cfg = SolverConfig(alpha=0.1, eps=1e-8, b_strategy="zero", grad_mode="analytic")
    res = run(half_square(), [1.0], cfg)
    assert res.status is Status.CONVERGED
    assert res.subproblem_solves == 2
    first, second = res.iterations
    assert first.accepted and first.norm_s == pytest.approx(1.0, abs=1e-12)
    assert second.sigma * second.norm_s < cfg.eps
    assert res.x == pytest.approx([0.0], abs=1e-12)
    assert res.certificate <= 1e-8


def test_stationary_start():
    const = SmoothObjective(eval=lambda x: 3.0)
    prob = ProblemSpec(2, ((const, Zero()), (const, Zero())), [[-1, 1]] * 2)
    x0 = np.array([0.3, -0.4])
    res = run(prob, x0)
    assert res.status is Status.CONVERGED and res.accepted_steps == 0 and res.subproblem_solves == 1
    assert np.array_equal(res.x, x0)
    assert res.certificate <= 1e-12


def test_aas1_from_origin():
    res = run(make_aas1(), [0.0, 0.0])
    assert res.status is Status.CONVERGED and res.accepted_steps <= 100
    assert res.certificate <= 1e-6


def test_descent_test_examples():
    assert descent_test([1, 1], [0.99, 0.99], 0.5, 0.1, 2.0)
    assert not descent_test([1, 1], [1, 1], 0.5, 0.1, 2.0)
    assert not descent_test([1, 1], [0.9, 1.0], 0.5, 0.1, 2.0)
    # the required decrease is not lost to rounding near large values
    assert not descent_test([1e6], [1e6], 0.1, 1e-10, 1.0)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["central", "forward", "analytic"]))
def test_trace_invariants(seed, mode):
    prob = make_aas1() if seed % 2 else make_aas2()
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(prob.start_box[:, 0], prob.start_box[:, 1])
    cfg = SolverConfig(grad_mode=mode, max_iter=30)
    res = run(prob, x0, cfg)
    sigmas = [r.sigma for r in res.iterations]
    assert all(b >= a for a, b in zip(sigmas, sigmas[1:]))
    for a, b in zip(res.iterations, res.iterations[1:]):
        assert b.sigma == (a.sigma if a.accepted else 2 * a.sigma)
        if a.accepted:
            assert descent_test(a.F, a.F_trial, cfg.alpha, cfg.eps, a.sigma)
            assert np.linalg.norm(b.x - a.x) == pytest.approx(a.norm_s, rel=1e-12)
            assert np.array_equal(b.F, a.F_trial)
        else:
            assert np.array_equal(b.x, a.x)
    assert res.accepted_steps == sum(r.accepted for r in res.iterations)
    assert res.sigma_doublings == sum(not r.accepted for r in res.iterations) - res.converged
    if res.converged:
        last = res.iterations[-1]
        assert last.sigma * last.norm_s < cfg.eps
        assert np.linalg.norm(res.x - last.x) == pytest.approx(last.norm_s, abs=1e-15)
    else:
        assert res.accepted_steps == cfg.max_iter or res.subproblem_solves == 10 * cfg.max_iter


def test_replay_is_identical():
    prob = robustify(make_aas2(), gen_uncertainty(5, 2, 2), 0.05)
    a = run(prob, [3.0, -2.0])
    b = run(prob, [3.0, -2.0])
    assert [(r.sigma, r.lam, r.norm_s, r.accepted, tuple(r.F)) for r in a.iterations] == [
        (r.sigma, r.lam, r.norm_s, r.accepted, tuple(r.F)) for r in b.iterations
    ]


def test_robust_run_converges_with_certificate():
    prob = robustify(make_aas1(), gen_uncertainty(1, 2, 2), 0.1)
    res = run(prob, [1.0, 1.0], SolverConfig(grad_mode="analytic", eps=1e-8))
    assert res.converged
    assert res.certificate <= certificate_bound(res, 1e-8)


def test_certificate_needs_converged_run():
    res = run(make_aas1(), [1.5, -1.0], SolverConfig(max_iter=1))
    assert res.status is Status.MAX_ITER
    with pytest.raises(UsageError):
        stationarity_certificate(res, make_aas1())
    with pytest.raises(UsageError):
        stationarity_certificate(RunResult(Status.SUBPROBLEM_FAILED, np.zeros(2), np.zeros(2)), make_aas1())


def test_solve_cap_bounds_doublings():
    # F rises everywhere except at x0 in floating point: every trial is rejected
    spiky = SmoothObjective(eval=lambda x: 0.0 if x[0] == 0.25 else 1.0, analytic_grad=lambda x: np.ones(1))
    prob = ProblemSpec(1, ((spiky, Zero()),), [[0, 1]])
    res = run(prob, [0.25], SolverConfig(max_iter=3, grad_mode="analytic"))
    assert res.status is Status.MAX_ITER
    assert res.subproblem_solves == 30 and res.sigma_doublings == 30


def test_config_validation():
    for bad in [dict(alpha=0), dict(alpha=1), dict(eps=0), dict(eps=1), dict(sigma0=0.5),
                dict(max_iter=0), dict(max_iter=2.5), dict(grad_mode="secant"), dict(b_strategy="lbfgs")]:
        with pytest.raises((ConfigurationError, ValueError)):
            SolverConfig(**bad)
    with pytest.raises(ConfigurationError):
        run(make_aas1(), [0.0, 0.0], SolverConfig(grad_mode=("central",)))
    no_grad = ProblemSpec(1, ((SmoothObjective(eval=lambda x: 0.0), Zero()),), [[0, 1]])
    with pytest.raises(ConfigurationError):
        run(no_grad, [0.0], SolverConfig(grad_mode="analytic"))
    with pytest.raises(ConfigurationError):
        run(make_aas1(), [0.0, 0.0, 0.0])
    nan_start = ProblemSpec(1, ((SmoothObjective(eval=lambda x: float("nan")), Zero()),), [[0, 1]])
    with pytest.raises(ConfigurationError):
        run(nan_start, [0.0])


def test_lambda_floor_flags_are_recorded():
    res = run(make_aas1(), [1.0, 1.0], SolverConfig(max_iter=5))
    assert all(r.lambda_flagged for r in res.iterations)
    res = run(make_aas1(), [1.0, 1.0], SolverConfig(max_iter=5, eps=1e-2, lambda_policy=LambdaPolicy(floor=1e-4)))
    assert all(r.lam >= 1e-4 for r in res.iterations)


def test_min_decrease_diagnostic():
    f = least_squares(np.eye(2), np.ones(2))
    f = SmoothObjective(f.eval, f.analytic_grad, HolderMeta(1.0, 1.0, 1.0))
    res = run(ProblemSpec(2, ((f, Zero()),), [[-1, 1]] * 2), [3.0, 3.0], SolverConfig(eps=1e-6))
    accepted = [r for r in res.iterations if r.accepted]
    assert accepted and all(r.min_decrease_met is not None for r in accepted)


def test_trace_csv(tmp_path):
    res = run(make_aas1(), [1.0, -1.0], SolverConfig(max_iter=10))
    path = tmp_path / "trace.csv"
    write_trace_csv(res, path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "sigma", "lambda", "accepted", "norm_s", "F_1", "F_2", "gamma_1", "gamma_2"]
    assert len(rows) == 1 + res.subproblem_solves
    for row, rec in zip(rows[1:], res.iterations):
        assert int(row[0]) == rec.k and float(row[1]) == rec.sigma and float(row[4]) == rec.norm_s
        assert [float(v) for v in row[5:7]] == list(rec.F)
