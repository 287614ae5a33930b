import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrgames.analysis import duality_gap, oracle_error, vi_residual
from vrgames.estimators import EstimatorState, exact_gradient
from vrgames.geometry import CompositeTerm, Point, Setup, bregman, check_feasible, theta, uniform_center
from vrgames.matrix import SparseMatrix, generate_random
from vrgames.solvers import (BudgetError, SolveOptions, StrongConfig, TrivialInstance, WorkCounter, default_params,
                             expected_work, inner_loop, outer_loop, outer_loop_strongly_monotone,
                             proximal_point_reference, restarted_inner_loop, run_inner, solve, strong_params)

ZERO3 = SparseMatrix.from_coo(3, 3, [], [], [])


def unit_max(A: SparseMatrix) -> SparseMatrix:
    r, c, v = A.coo()
    return SparseMatrix.from_coo(A.m, A.n, r, c, v / A.norm_max)


def softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def test_default_params_worked_example():
    A = unit_max(generate_random(100, 100, 1.0, "uniform", 0))
    cfg = default_params(Setup("l1l1", 100, 100), A, 0.1)
    alpha = math.sqrt(0.02)
    assert cfg.alpha == pytest.approx(alpha, rel=1e-14)
    assert cfg.eta == pytest.approx(alpha / 10, rel=1e-14)
    assert cfg.T == 2000
    assert cfg.K == math.ceil(math.log(1e4) * alpha / 0.1) == 14
    assert cfg.L == 1.0


def test_default_params_large_epsilon_boundary():
    A = unit_max(generate_random(100, 100, 1.0, "uniform", 0))
    s = Setup("l1l1", 100, 100)
    cfg = default_params(s, A, 100.0)
    assert cfg.alpha == pytest.approx(100.0 / theta(s), rel=1e-14)
    assert cfg.K == 1


def test_default_params_l2l1_constants():
    A = generate_random(30, 20, 0.5, "normal", 1)
    cfg = default_params(Setup("l2l1", 20, 30), A, 0.05)
    assert cfg.L == A.norm_2_to_inf
    assert cfg.eta == pytest.approx(cfg.alpha / (24 * cfg.L ** 2), rel=1e-14)
    assert cfg.tau == pytest.approx(1 / cfg.eta, rel=1e-14)
    assert cfg.T >= math.ceil(4 / (cfg.eta * cfg.alpha) * (1 - 1e-12))
    with pytest.raises(ValueError):
        default_params(Setup("l2l1", 20, 30), A, 0.0)


def test_zero_matrix_is_trivial():
    with pytest.raises(TrivialInstance):
        default_params(Setup("l1l1", 3, 3), ZERO3, 0.1)
    r = solve(ZERO3, Setup("l1l1", 3, 3), 0.1)
    assert r.measured_gap == 0 and r.converged and r.total_work == 0


def test_inner_loop_zero_matrix_one_step():
    s = Setup("l1l1", 3, 3)
    w0 = Point([0.2, 0.3, 0.5], [0.6, 0.2, 0.2], "l1l1")
    est = EstimatorState(ZERO3, s, w0, "l1l1", rng=0)
    out = inner_loop(est, w0, 0.5, 0.1, 1)
    np.testing.assert_allclose(out.x, w0.x, atol=1e-15)
    np.testing.assert_allclose(out.y, w0.y, atol=1e-15)


def test_inner_loop_identity_symmetry():
    I = SparseMatrix.from_dense(np.eye(2))
    s = Setup("l1l1", 2, 2)
    w0 = uniform_center(s)
    est = EstimatorState(I, s, w0, "exact", rng=0)
    out = inner_loop(est, w0, 0.3, 0.2, 50)
    np.testing.assert_allclose(out.x, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(out.y, [0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("kind", ["l1l1", "l2l1", "l2l2"])
def test_inner_loop_oracle_property(kind):
    A = generate_random(6, 5, 1.0, "uniform", 3)
    s = Setup(kind, 5, 6)
    cfg = default_params(s, A, 0.05 * A.norm_max)
    rng = np.random.default_rng(0)
    w0 = Point(rng.dirichlet(np.ones(5)) if s.x_simplex else rng.standard_normal(5) * 0.1,
               rng.dirichlet(np.ones(6)) if s.y_simplex else rng.standard_normal(6) * 0.1, kind)
    errs = []
    for seed in range(50):
        est = EstimatorState(A, s, w0, cfg.variant, cfg.tau, seed)
        z = inner_loop(est, w0, cfg.alpha, cfg.eta, cfg.T)
        errs.append(oracle_error(s, A, z, w0, cfg.alpha))
    assert np.median(errs) <= 0.05 * cfg.alpha * theta(s)


@pytest.mark.parametrize("kind,variant", [("l1l1", "l1l1"), ("l2l1", "l2l1_clipped"),
                                          ("l2l1", "l2l1_oblivious"), ("l2l2", "l2l2_factored")])
def test_python_backend_matches_numba(kind, variant):
    A = generate_random(7, 6, 0.6, "normal", 2)
    s = Setup(kind, 6, 7)
    # generic center: at the uniform center some differences are pure rounding noise
    rng = np.random.default_rng(1)
    w0 = Point(rng.dirichlet(np.ones(6)) if s.x_simplex else rng.standard_normal(6) * 0.2,
               rng.dirichlet(np.ones(7)) if s.y_simplex else rng.standard_normal(7) * 0.2, kind)
    comp = CompositeTerm(0.1, 0.2)
    a = run_inner(EstimatorState(A, s, w0, variant, 2.0, 5), w0, 0.3, 0.05, 200, composite=comp, backend="numba")
    b = run_inner(EstimatorState(A, s, w0, variant, 2.0, 5), w0, 0.3, 0.05, 200, composite=comp, backend="python")
    np.testing.assert_allclose(a.average.x, b.average.x, atol=1e-10)
    np.testing.assert_allclose(a.last.y, b.last.y, atol=1e-10)
    assert a.work == b.work and a.touches == b.touches


@pytest.mark.parametrize("kind", ["l1l1", "l2l1", "l2l2"])
def test_exact_inner_iteration_fixed_point_solves_vi(kind):
    A = generate_random(4, 5, 1.0, "normal", 8)
    s = Setup(kind, 5, 4)
    w0 = uniform_center(s)
    alpha = 0.7
    res = run_inner(EstimatorState(A, s, w0, "exact", rng=0), w0, alpha, 0.05, 20000)
    assert vi_residual(s, A, res.last, w0, alpha) <= 1e-6
    z, _ = proximal_point_reference(A, s, w0, alpha)
    assert vi_residual(s, A, z, w0, alpha) <= 1e-9
    np.testing.assert_allclose(res.last.x, z.x, atol=1e-6)


def test_restarted_zero_matrix_and_uniform_truncation():
    s = Setup("l1l1", 3, 3)
    w0 = Point([0.2, 0.3, 0.5], [0.6, 0.2, 0.2], "l1l1")
    est = EstimatorState(ZERO3, s, w0, "l1l1", rng=0)
    rng = np.random.default_rng(0)

    def recenter(w):
        est.recenter(w)
        return est
    out = restarted_inner_loop(recenter, w0, 0.4, 0.1, 10, 5, rng)
    np.testing.assert_allclose(out.x, w0.x, atol=1e-15)
    counts = np.zeros(11)
    for _ in range(10000):
        c = WorkCounter()
        restarted_inner_loop(recenter, w0, 0.4, 0.1, 10, 1, rng, counter=c)
        # zero matrix: work = 1 (center) + 4 T^ (n + m)
        counts[(c.total - 1) // 24] += 1
    freq = counts[1:] / 10000
    assert counts[0] == 0 and np.all((0.08 <= freq) & (freq <= 0.12))


def test_restarted_iterates_feasible():
    A = generate_random(8, 6, 0.8, "uniform", 1)
    s = Setup("l2l1", 6, 8)
    w0 = uniform_center(s)
    est = EstimatorState(A, s, w0, "l2l1_clipped", 5.0, 0)

    def recenter(w):
        est.recenter(w)
        return est
    hist = []
    restarted_inner_loop(recenter, w0, 0.5, 0.02, 100, 6, np.random.default_rng(1), history=hist)
    assert len(hist) == 7
    for p in hist:
        check_feasible(s, p)


def exact_prox_oracle(A, s, alpha):
    """Mirror-prox half step: argmin <g(z), w> + alpha V_z(w)."""
    def oracle(z):
        g = exact_gradient(A, z)
        if s.x_simplex:
            return Point(softmax(np.log(z.x) - g.gx / alpha), softmax(np.log(z.y) - g.gy / alpha), s.kind)
        raise NotImplementedError
    return oracle


def test_outer_loop_transcription_cross_check():
    A = generate_random(5, 4, 1.0, "uniform", 3)
    D = A.to_dense()
    s = Setup("l1l1", 4, 5)
    alpha, K = 0.8, 6
    rep = outer_loop(exact_prox_oracle(A, s, alpha), A, s, alpha, K)
    x, y = np.full(4, 0.25), np.full(5, 0.2)
    sx, sy = np.zeros(4), np.zeros(5)
    for _ in range(K):
        hx = softmax(np.log(x) - D.T @ y / alpha)
        hy = softmax(np.log(y) + D @ x / alpha)
        x = softmax(np.log(x) - D.T @ hy / alpha)
        y = softmax(np.log(y) + D @ hx / alpha)
        sx += hx
        sy += hy
    np.testing.assert_allclose(rep.final_point.x, sx / K, atol=1e-13)
    np.testing.assert_allclose(rep.final_point.y, sy / K, atol=1e-13)
    # one exact gradient and 2(n+m) per step; the oracle's own work is charged by solve
    assert rep.total_work == K * (A.nnz + 2 * 9)


def test_outer_loop_zero_matrix_one_step():
    s = Setup("l1l1", 3, 3)
    rep = outer_loop(exact_prox_oracle(ZERO3, s, 1.0), ZERO3, s, 1.0, 1)
    np.testing.assert_allclose(rep.final_point.x, np.full(3, 1 / 3), atol=1e-15)
    assert rep.measured_gap == 0


def test_matching_pennies_gap_shrinks():
    A = SparseMatrix.from_dense([[0, 1], [-1, 0]])
    s = Setup("l1l1", 2, 2)
    r = solve(A, s, 0.01, SolveOptions(seed=1, gap_check_every=1))
    gaps = [t.gap for t in r.trace]
    assert gaps[-1] <= 0.01
    assert max(gaps[len(gaps) // 2:]) < max(gaps[:5])
    # f = y1 x2 - y2 x1 has the pure saddle x = y = (1, 0) with value 0
    assert r.final_point.x[0] >= 0.99 and r.final_point.y[0] >= 0.99


def test_gap_at_40_not_worse_than_at_10():
    A = generate_random(64, 64, 1.0, "uniform", 11)
    s = Setup("l1l1", 64, 64)
    g10, g40 = [], []
    for seed in range(9):
        r = solve(A, s, 1e-3, SolveOptions(theorem_mode=False, early_stop=False, K=40, seed=seed,
                                           eta=default_params(s, A, 1e-3).eta))
        by_k = {t.k: t.gap for t in r.trace}
        g10.append(by_k[10])
        g40.append(by_k[40])
    assert np.median(g40) <= np.median(g10)


def test_strong_step_collapses_to_half_iterate():
    A = generate_random(3, 3, 1.0, "normal", 0)
    s = Setup("l2l2", 3, 3)
    p = Point([0.3, -0.1, 0.2], [0.0, 0.4, -0.3], "l2l2")
    rep = outer_loop_strongly_monotone(lambda z: p, A, s, CompositeTerm(), StrongConfig(1e12, 1e12), 1.0, 1)
    np.testing.assert_allclose(rep.final_point.x, p.x, atol=1e-9)
    np.testing.assert_allclose(rep.final_point.y, p.y, atol=1e-9)
    with pytest.raises(ValueError):
        outer_loop_strongly_monotone(lambda z: p, A, s, CompositeTerm(), StrongConfig(0, 1), 1.0, 1)


def test_strong_loop_reaches_origin():
    A = generate_random(4, 4, 1.0, "normal", 2)
    s = Setup("l2l2", 4, 4)
    comp = CompositeTerm(0.1, 0.1)
    start = Point(np.full(4, 0.45), np.full(4, -0.45), "l2l2")
    r = solve(A, s, 1e-4, SolveOptions(composite=comp, strongly_monotone=True, theorem_mode=False,
                                       early_stop=False, K=150, alpha=0.1, start=start,
                                       reference=Point(np.zeros(4), np.zeros(4), "l2l2")))
    z = r.final_point
    assert z.x @ z.x + z.y @ z.y <= 1e-6
    assert r.trace[-1].divergence == pytest.approx(0.5 * (z.x @ z.x + z.y @ z.y))


def test_strong_params_shape():
    A = generate_random(10, 10, 1.0, "normal", 0)
    s = Setup("l2l2", 10, 10)
    cfg, strong = strong_params(s, A, 1e-3, CompositeTerm(0.4, 0.1))
    assert strong.rho == pytest.approx(2.0) and strong.mu == pytest.approx(0.2)
    assert cfg.alpha == pytest.approx(A.norm_fro * math.sqrt(20 / A.nnz))
    assert cfg.K >= 1
    with pytest.raises(ValueError):
        strong_params(s, A, 1e-3, CompositeTerm(0.4, 0.0))


def test_solve_identity():
    I = SparseMatrix.from_dense(np.eye(2))
    r = solve(I, Setup("l1l1", 2, 2), 0.01)
    assert r.measured_gap <= 0.01


def test_solve_dominant_column():
    A = SparseMatrix.from_dense([[0.1, 0.8, 0.9], [0.2, 0.7, 1.0]])
    r = solve(A, Setup("l1l1", 3, 2), 0.01)
    assert r.measured_gap <= 0.01
    assert r.final_point.x[0] >= 0.9
    assert r.final_point.x[0] == r.final_point.x.max()


def test_solve_determinism_and_work_identity():
    A = generate_random(20, 15, 0.5, "uniform", 4)
    s = Setup("l1l1", 15, 20)
    opts = SolveOptions(seed=3, gap_check_every=2)
    a, b = solve(A, s, 0.1, opts), solve(A, s, 0.1, opts)
    assert [(t.k, t.work, t.gap) for t in a.trace] == [(t.k, t.work, t.gap) for t in b.trace]
    np.testing.assert_array_equal(a.final_point.x, b.final_point.x)
    cfg = SimpleNamespace(T=a.config["T"], K=a.config["K"])
    assert a.total_work == expected_work(cfg, A, a.sparse_touches, a.outer_iterations)
    assert all(t2.work > t1.work for t1, t2 in zip(a.trace, a.trace[1:]))


def test_solve_budget_and_override_errors():
    A = generate_random(20, 15, 0.5, "uniform", 4)
    s = Setup("l1l1", 15, 20)
    with pytest.raises(BudgetError):
        solve(A, s, 0.01, SolveOptions(max_inner_steps=10))
    with pytest.raises(ValueError):
        solve(A, s, 0.01, SolveOptions(theorem_mode=True, K=3))
    with pytest.raises(ValueError):
        solve(A, s, 0.01, SolveOptions(theorem_mode=False, K=0))


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from(["l1l1", "l2l1", "l2l2"]), m=st.integers(1, 6), n=st.integers(1, 6),
       seed=st.integers(0, 10 ** 6))
def test_all_outer_iterates_feasible(kind, m, n, seed):
    A = generate_random(m, n, 1.0, "normal", seed)
    s = Setup(kind, n, m)
    if theta(s) == 0:
        with pytest.raises(TrivialInstance):
            default_params(s, A, 0.1)
        return
    cfg = default_params(s, A, 0.2 * A.norm_max)
    est = EstimatorState(A, s, uniform_center(s), cfg.variant, cfg.tau, seed)
    seen = []

    def oracle(z):
        seen.append(z)
        est.recenter(z)
        h = inner_loop(est, z, cfg.alpha, cfg.eta, min(cfg.T, 300))
        seen.append(h)
        return h
    rep = outer_loop(oracle, A, s, cfg.alpha, 5)
    for p in seen + [rep.final_point]:
        check_feasible(s, p)
    assert rep.measured_gap >= -1e-12
    assert bregman(s, uniform_center(s), rep.final_point) >= 0
    assert duality_gap(s, A, rep.final_point) == rep.measured_gap
