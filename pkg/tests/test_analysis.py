import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrgames.analysis import (Instance, duality_gap, gap_lower_bound, mirror_prox_baseline, run_benchmark,
                              smd_estimate, sublinear_smd_baseline)
from vrgames.geometry import CompositeTerm, InfeasiblePointError, Point, Setup, composite_value, uniform_center
from vrgames.matrix import SparseMatrix, generate_random

I2 = SparseMatrix.from_dense(np.eye(2))


def rand_point(s: Setup, rng) -> Point:
    def block(simplex, d):
        if simplex:
            return rng.dirichlet(np.ones(d))
        v = rng.standard_normal(d)
        return v / np.linalg.norm(v) * rng.uniform() ** (1 / d)
    return Point(block(s.x_simplex, s.n), block(s.y_simplex, s.m), s.kind)


def test_gap_examples():
    assert duality_gap(Setup("l1l1", 2, 2), I2, uniform_center(Setup("l1l1", 2, 2))) == 0.0
    A = SparseMatrix.from_dense([[1, 0], [0, 0]])
    assert duality_gap(Setup("l1l1", 2, 2), A, Point([1, 0], [1, 0], "l1l1")) == 1.0
    B = generate_random(4, 3, 1.0, "normal", 0)
    s = Setup("l2l1", 3, 4)
    z = uniform_center(s)
    assert duality_gap(s, B, z) == pytest.approx(np.linalg.norm(B.to_dense().T @ z.y), abs=1e-15)
    s2 = Setup("l2l2", 3, 4)
    z2 = rand_point(s2, np.random.default_rng(1))
    D = B.to_dense()
    assert duality_gap(s2, B, z2) == pytest.approx(np.linalg.norm(D @ z2.x) + np.linalg.norm(D.T @ z2.y),
                                                   rel=1e-14)
    with pytest.raises(InfeasiblePointError):
        duality_gap(Setup("l1l1", 2, 2), I2, Point([0.5, 0.5], [1.0, 0.5], "l1l1"))


@settings(max_examples=100, deadline=None)
@given(kind=st.sampled_from(["l1l1", "l2l1", "l2l2"]), m=st.integers(1, 6), n=st.integers(1, 6),
       seed=st.integers(0, 10 ** 6))
def test_gap_dominates_sampled_lower_bounds(kind, m, n, seed):
    A = generate_random(m, n, 1.0, "normal", seed)
    s = Setup(kind, n, m)
    rng = np.random.default_rng(seed)
    z = rand_point(s, rng)
    gap = duality_gap(s, A, z)
    assert gap >= 0
    for _ in range(50):
        assert gap_lower_bound(A, z, rand_point(s, rng)) <= gap + 1e-12
    # the bound is tight at the best responses
    D = A.to_dense()
    ux = np.eye(n)[np.argmin(D.T @ z.y)] if s.x_simplex else -D.T @ z.y / max(np.linalg.norm(D.T @ z.y), 1e-300)
    uy = np.eye(m)[np.argmax(D @ z.x)] if s.y_simplex else D @ z.x / max(np.linalg.norm(D @ z.x), 1e-300)
    assert gap_lower_bound(A, z, Point(ux, uy, kind)) == pytest.approx(gap, abs=1e-12)


def test_gap_of_average_equals_averaged_regret_form():
    A = generate_random(5, 4, 1.0, "normal", 3)
    s = Setup("l1l1", 4, 5)
    rng = np.random.default_rng(0)
    zs = [rand_point(s, rng) for _ in range(7)]
    avg = Point(np.mean([z.x for z in zs], 0), np.mean([z.y for z in zs], 0), "l1l1")
    gap = duality_gap(s, A, avg)
    D = A.to_dense()
    ux = np.eye(4)[np.argmin(D.T @ avg.y)]
    uy = np.eye(5)[np.argmax(D @ avg.x)]
    regret = np.mean([gap_lower_bound(A, z, Point(ux, uy, "l1l1")) for z in zs])
    assert gap <= regret + 1e-12


@pytest.mark.parametrize("kind", ["l1l1", "l2l1", "l2l2"])
def test_composite_gap_matches_brute_force(kind):
    """Closed-form best responses against explicit maximizers plus random candidates."""
    A = generate_random(3, 4, 1.0, "normal", 7)
    s = Setup(kind, 4, 3)
    comp = CompositeTerm(0.3, 0.5)
    rng = np.random.default_rng(2)
    z = rand_point(s, rng)
    D = A.to_dense()

    def block_value(simplex, u, lam):
        if simplex:
            u = np.clip(u, 1e-300, None)
            return lam * float(u @ np.log(u))
        return lam * 0.5 * float(u @ u)

    def f(x, y):
        return y @ D @ x + block_value(s.x_simplex, x, comp.lambda_x) - block_value(s.y_simplex, y, comp.lambda_y)

    def best(simplex, c, lam):
        """argmax <c, u> - lam r(u)."""
        if simplex:
            e = np.exp((c - c.max()) / lam)
            return e / e.sum()
        nc = np.linalg.norm(c)
        return c / lam if nc <= lam else c / nc

    by = best(s.y_simplex, D @ z.x, comp.lambda_y)
    bx = best(s.x_simplex, -D.T @ z.y, comp.lambda_x)
    brute = f(z.x, by) - f(bx, z.y)
    assert duality_gap(s, A, z, comp) == pytest.approx(brute, abs=1e-12)
    for _ in range(500):
        u = rand_point(s, rng)
        assert f(z.x, u.y) <= f(z.x, by) + 1e-12
        assert f(u.x, z.y) >= f(bx, z.y) - 1e-12
    # both players' regularizers enter the gap with a plus sign
    assert composite_value(comp, s, z) == pytest.approx(
        block_value(s.x_simplex, z.x, comp.lambda_x) + block_value(s.y_simplex, z.y, comp.lambda_y), abs=1e-14)


def test_mirror_prox_identity_fixed_point():
    r = mirror_prox_baseline(I2, Setup("l1l1", 2, 2), 1e-9, 10)
    assert r.measured_gap == 0 and r.converged and r.outer_iterations == 1


def test_mirror_prox_skew_instance_within_bound():
    A = SparseMatrix.from_dense([[0, 1], [-1, 0]])
    s = Setup("l1l1", 2, 2)
    bound = math.ceil(4 * math.log(4) * 1.0 / 0.01)
    r = mirror_prox_baseline(A, s, 0.01, bound)
    assert r.converged and r.measured_gap <= 0.01
    assert r.total_work == r.outer_iterations * (2 * A.nnz + 2 * 4)
    assert all(t.work == t.k * (2 * A.nnz + 8) for t in r.trace)


def test_mirror_prox_reports_non_converged():
    A = generate_random(10, 10, 1.0, "uniform", 0)
    r = mirror_prox_baseline(A, Setup("l1l1", 10, 10), 1e-8, 3)
    assert not r.converged and r.outer_iterations == 3 and r.measured_gap > 1e-8


def test_smd_estimator_mean_by_enumeration():
    A = generate_random(4, 4, 1.0, "normal", 5)
    z = uniform_center(Setup("l1l1", 4, 4))
    mx, my = np.zeros(4), np.zeros(4)
    for i in range(4):
        for j in range(4):
            gx, gy = smd_estimate(A, i, j)
            mx += z.y[i] * z.x[j] * gx
            my += z.y[i] * z.x[j] * gy
    np.testing.assert_allclose(mx, A.matvec_transpose(z.y), atol=1e-12)
    np.testing.assert_allclose(my, -A.matvec(z.x), atol=1e-12)


def test_smd_zero_matrix_and_setup_guard():
    Z = SparseMatrix.from_coo(3, 3, [], [], [])
    r = sublinear_smd_baseline(Z, Setup("l1l1", 3, 3), 0.1, 100)
    np.testing.assert_array_equal(r.final_point.x, np.full(3, 1 / 3))
    assert r.measured_gap == 0
    with pytest.raises(ValueError):
        sublinear_smd_baseline(Z, Setup("l2l1", 3, 3), 0.1, 100)
    assert "reference baseline" in r.method


def test_smd_more_steps_lower_gap():
    A = generate_random(64, 64, 1.0, "uniform", 2)
    s = Setup("l1l1", 64, 64)
    short = [sublinear_smd_baseline(A, s, 1e-12, 1000, seed).measured_gap for seed in range(9)]
    long = [sublinear_smd_baseline(A, s, 1e-12, 100000, seed).measured_gap for seed in range(9)]
    assert np.median(long) < np.median(short)


def _instance(seed=0, kind="l1l1", m=12, n=10):
    A = generate_random(m, n, 1.0, "uniform", seed)
    return Instance(f"rand{seed}", A, Setup(kind, n, m))


def test_benchmark_single_cell_matches_solve():
    from vrgames.solvers import SolveOptions, solve
    inst = _instance()
    res = run_benchmark([inst], ["vr"], [10 ** 6], [4], 0.05, vr_options={"theorem_mode": False})
    assert len(res.cells) == 1
    rep = solve(inst.matrix, inst.setup, 0.05, SolveOptions(theorem_mode=False, seed=4))
    assert [(t.k, t.work, t.gap) for t in res.cells[0].trace] == [(t.k, t.work, t.gap) for t in rep.trace]


def test_benchmark_fairness_sorting_and_output(tmp_path):
    insts = [_instance(0), _instance(1, "l2l1")]
    res = run_benchmark(insts, ["vr", "mirror-prox", "smd"], [50000, 1000, 20000], [0, 1], 0.05,
                        vr_options={"theorem_mode": False})
    assert res.budgets == [1000, 20000, 50000]
    assert any("smd" in n and "rand1" in n for n in res.notices)
    for inst in insts:
        sums = {c.checksum for c in res.cells if c.instance_id == inst.instance_id}
        assert sums == {inst.matrix.checksum}
    methods = {(c.instance_id, c.method) for c in res.cells}
    assert ("rand1", "smd") not in methods and ("rand0", "smd") in methods
    summ = res.summary()
    assert set(summ["rand0"]) == {"vr", "mirror-prox", "smd"}
    for per in summ.values():
        for stats in per.values():
            gaps = [stats["median_gap_at_budget"][b] for b in res.budgets]
            assert all(b <= a for a, b in zip(gaps, gaps[1:]) if math.isfinite(a))
    res.write_json(tmp_path / "r.json")
    res.write_csv(tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["budgets"] == [1000, 20000, 50000]
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["instance_id", "method", "seed", "work", "gap"]
    assert len(rows) == len(res.cells) * 3


def test_benchmark_parallel_equals_serial():
    insts = [_instance(2)]
    kw = dict(vr_options={"theorem_mode": False})
    a = run_benchmark(insts, ["vr", "mirror-prox"], [10 ** 5], [0, 1], 0.05, **kw)
    b = run_benchmark(insts, ["vr", "mirror-prox"], [10 ** 5], [0, 1], 0.05, workers=2, **kw)
    assert a.to_dict() == b.to_dict()


def test_benchmark_errors():
    with pytest.raises(ValueError):
        run_benchmark([], ["vr"], [10], [0], 0.1)
    with pytest.raises(ValueError):
        run_benchmark([_instance()], ["simplex-method"], [10], [0], 0.1)
