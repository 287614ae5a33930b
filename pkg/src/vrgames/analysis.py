"""Duality gaps, baselines and the work-normalized benchmark harness."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .geometry import (CompositeTerm, Point, Setup, SetupKind, check_feasible, composite_value,
                       project_ball, theta, uniform_center)
from .matrix import SparseMatrix


@dataclass
class TraceRecord:
    k: int
    work: int
    gap: float
    divergence: Optional[float] = None


# -- gaps --------------------------------------------------------------------


def _logsumexp(v: np.ndarray) -> float:
    mx = v.max()
    return float(mx + np.log(np.exp(v - mx).sum()))


def _support(simplex: bool, c: np.ndarray, lam: float) -> float:
    """``max_u <c, u> - lam r(u)`` over the block domain."""
    if simplex:
        if lam == 0:
            return float(c.max())
        return lam * _logsumexp(c / lam)
    nc = float(np.linalg.norm(c))
    if lam == 0:
        return nc
    return nc * nc / (2 * lam) if nc <= lam else nc - lam / 2


def duality_gap(setup: Setup, A: SparseMatrix, z: Point, composite: CompositeTerm | None = None,
                check: bool = True) -> float:
    """``max_y' f(x, y') - min_x' f(x', y)`` for ``f = y^T A x + lx r(x) - ly r(y)``."""
    if check:
        check_feasible(setup, z)
    Ax = A.matvec(z.x)
    Aty = A.matvec_transpose(z.y)
    lx = composite.lambda_x if composite else 0.0
    ly = composite.lambda_y if composite else 0.0
    best_y = _support(setup.y_simplex, Ax, ly)
    best_x = -_support(setup.x_simplex, -Aty, lx)
    gap = best_y - best_x
    if composite is not None and not composite.is_zero:
        gap += composite_value(CompositeTerm(lx, ly), setup, z)
    return max(gap, 0.0)


def gap_lower_bound(A: SparseMatrix, z: Point, u: Point) -> float:
    """``<g(z), z - u>``; never exceeds the bilinear gap."""
    gx = A.matvec_transpose(z.y)
    gy = -A.matvec(z.x)
    return float(gx @ (z.x - u.x) + gy @ (z.y - u.y))


def _block_oracle_term(simplex: bool, c: np.ndarray, z: np.ndarray, w0: np.ndarray, a: float) -> float:
    """``max_u <c, z - u> - a V_{w0}(u)`` on one block."""
    if simplex:
        pos = w0 > 0
        return float(c @ z) + a * _logsumexp(np.log(w0[pos]) - c[pos] / a)
    u = project_ball(w0 - c / a)
    return float(c @ (z - u)) - 0.5 * a * float((u - w0) @ (u - w0))


def oracle_error(setup: Setup, A: SparseMatrix, z: Point, w0: Point, alpha: float) -> float:
    """``max_u <g(z), z - u> - alpha V_{w0}(u)`` in closed form per block."""
    gx = A.matvec_transpose(z.y)
    gy = -A.matvec(z.x)
    return (_block_oracle_term(setup.x_simplex, gx, z.x, w0.x, alpha * setup.rho)
            + _block_oracle_term(setup.y_simplex, gy, z.y, w0.y, alpha / setup.rho))


def vi_residual(setup: Setup, A: SparseMatrix, z: Point, w0: Point, alpha: float) -> float:
    """``max_u <g(z) + alpha grad V_{w0}(z), z - u>``: zero exactly at z_alpha."""
    gx = A.matvec_transpose(z.y)
    gy = -A.matvec(z.x)
    out = 0.0
    for simplex, g, zb, wb, a in ((setup.x_simplex, gx, z.x, w0.x, alpha * setup.rho),
                                  (setup.y_simplex, gy, z.y, w0.y, alpha / setup.rho)):
        if simplex:
            c = g + a * (np.log(zb) - np.log(wb))
            out += float(c @ zb - c.min())
        else:
            c = g + a * (zb - wb)
            out += float(c @ zb + np.linalg.norm(c))
    return out


# -- deterministic baseline ------------------------------------------------


def mirror_prox_baseline(A: SparseMatrix, setup: Setup, epsilon: float, K_max: int, *,
                         start: Point | None = None, gap_check_every: int = 1,
                         max_work: int | None = None):
    """Deterministic mirror-prox with alpha = L and exact gradients.

    Each iteration costs two exact gradients and two mirror steps:
    2 nnz(A) + 2(n+m) work. Stops once the averaged iterate has gap <= epsilon.
    """
    from .estimators import exact_gradient, setup_lipschitz
    from .geometry import mirror_step
    from .solvers import SolveReport

    L = setup_lipschitz(A, setup.kind)
    z = (start or uniform_center(setup)).copy()
    n, m = setup.n, setup.m
    per_iter = 2 * max(A.nnz, 1) + 2 * (n + m)
    trace: list[TraceRecord] = []
    if L == 0:
        gap = duality_gap(setup, A, z)
        return SolveReport(z, gap, [TraceRecord(0, 0, gap)], 0, method="mirror-prox",
                           converged=gap <= epsilon, config={"alpha": 0.0})
    alpha = L
    avg = None
    gap = math.inf
    work = 0
    k = 0
    converged = False
    for k in range(1, K_max + 1):
        g = exact_gradient(A, z)
        zh = mirror_step(setup, (g.gx, g.gy), [(z, alpha)])
        gh = exact_gradient(A, zh)
        z = mirror_step(setup, (gh.gx, gh.gy), [(z, alpha)])
        work += per_iter
        avg = zh.copy() if avg is None else Point(avg.x + (zh.x - avg.x) / k,
                                                  avg.y + (zh.y - avg.y) / k, setup.kind)
        if (gap_check_every and k % gap_check_every == 0) or k == K_max:
            gap = duality_gap(setup, A, avg)
            trace.append(TraceRecord(k, work, gap))
            if gap <= epsilon:
                converged = True
                break
        if max_work is not None and work >= max_work:
            if not trace or trace[-1].k != k:
                gap = duality_gap(setup, A, avg)
                trace.append(TraceRecord(k, work, gap))
            break
    return SolveReport(avg, gap, trace, work, method="mirror-prox", converged=converged,
                       outer_iterations=k, config={"alpha": alpha, "K_max": K_max})


# -- sublinear reference baseline --------------------------------------------


@numba.njit(cache=True)
def _smd_chunk(indptr, indices, data, cptr, cidx, cdat, lx, ly, x, y, sx, sy, steps, eta, rng):
    """Entropic SMD steps with i ~ y, j ~ x; running sums of iterates in sx, sy."""
    n = len(x)
    m = len(y)
    touches = 0
    for _ in range(steps):
        u = rng.random()
        acc = 0.0
        i = m - 1
        for k in range(m):
            acc += y[k]
            if u < acc:
                i = k
                break
        u = rng.random()
        acc = 0.0
        j = n - 1
        for k in range(n):
            acc += x[k]
            if u < acc:
                j = k
                break
        for k in range(indptr[i], indptr[i + 1]):
            lx[indices[k]] -= eta * data[k]
        for k in range(cptr[j], cptr[j + 1]):
            ly[cidx[k]] += eta * cdat[k]
        touches += (indptr[i + 1] - indptr[i]) + (cptr[j + 1] - cptr[j])
        mx = lx.max()
        s = 0.0
        for k in range(n):
            s += math.exp(lx[k] - mx)
        for k in range(n):
            lx[k] = lx[k] - mx - math.log(s)
            x[k] = math.exp(lx[k])
        mx = ly.max()
        s = 0.0
        for k in range(m):
            s += math.exp(ly[k] - mx)
        for k in range(m):
            ly[k] = ly[k] - mx - math.log(s)
            y[k] = math.exp(ly[k])
        sx += x
        sy += y
    return touches


def smd_estimate(A: SparseMatrix, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """One-sample estimate of g(z) used by the sublinear baseline: (A_i:, -A_:j)."""
    return A.row(i).to_dense(), -A.col(j).to_dense()


def sublinear_smd_baseline(A: SparseMatrix, setup: Setup, epsilon: float, T_max: int, seed: int = 0, *,
                           gap_check_every: int | None = None):
    """Reference baseline: plain stochastic mirror descent on the simplex pair
    with one-sample estimates (i ~ y, j ~ x) and step sqrt(Theta/T)/L.

    Each step costs 2(n+m) plus the touched row and column.
    """
    from .solvers import SolveReport

    if setup.kind != SetupKind.L1L1:
        raise ValueError("the sublinear reference baseline supports the l1l1 setup only")
    rng = np.random.default_rng(seed)
    n, m = setup.n, setup.m
    L = A.norm_max
    z = uniform_center(setup)
    if L == 0:
        gap = duality_gap(setup, A, z)
        return SolveReport(z, gap, [TraceRecord(0, 0, gap)], 0, method="smd (reference baseline)",
                           converged=gap <= epsilon)
    eta = math.sqrt(theta(setup) / T_max) / L
    x, y = z.x.copy(), z.y.copy()
    lx, ly = np.log(x), np.log(y)
    sx, sy = np.zeros(n), np.zeros(m)
    every = gap_check_every or max(1, T_max // 100)
    done = 0
    work = 0
    touches = 0
    trace: list[TraceRecord] = []
    gap = math.inf
    converged = False
    while done < T_max:
        steps = min(every, T_max - done)
        t = _smd_chunk(A.indptr, A.indices, A.data, A.col_indptr, A.col_indices, A.col_data,
                       lx, ly, x, y, sx, sy, steps, eta, rng)
        done += steps
        touches += int(t)
        work = done * 2 * (n + m) + touches
        avg = Point(sx / done, sy / done, setup.kind)
        avg.x /= avg.x.sum()
        avg.y /= avg.y.sum()
        gap = duality_gap(setup, A, avg)
        trace.append(TraceRecord(done, work, gap))
        if gap <= epsilon:
            converged = True
            break
    return SolveReport(avg, gap, trace, work, touches, method="smd (reference baseline)",
                       converged=converged, outer_iterations=done,
                       config={"eta": eta, "T_max": T_max, "seed": seed})


# -- benchmark harness -------------------------------------------------------

METHODS = ("vr", "mirror-prox", "smd")


@dataclass
class Instance:
    instance_id: str
    matrix: SparseMatrix
    setup: Setup


@dataclass
class CellResult:
    instance_id: str
    method: str
    seed: int
    trace: list[TraceRecord]
    work_to_epsilon: Optional[int]
    checksum: str


@dataclass
class BenchmarkResult:
    budgets: list[int]
    seeds: list[int]
    epsilon: float
    cells: list[CellResult] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)
    instances: dict = field(default_factory=dict)

    def gap_at(self, cell: CellResult, budget: int) -> float:
        """Last measured gap with work <= budget (inf before the first record)."""
        best = math.inf
        for r in cell.trace:
            if r.work <= budget:
                best = r.gap
        return best

    def summary(self) -> dict:
        out: dict = {}
        keys = sorted({(c.instance_id, c.method) for c in self.cells})
        for inst, meth in keys:
            cells = [c for c in self.cells if c.instance_id == inst and c.method == meth]
            med = {b: float(np.median([self.gap_at(c, b) for c in cells])) for b in self.budgets}
            wte = [c.work_to_epsilon if c.work_to_epsilon is not None else math.inf for c in cells]
            out.setdefault(inst, {})[meth] = {
                "median_gap_at_budget": med,
                "median_work_to_epsilon": float(np.median(wte)),
            }
        return out

    def rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            for b in self.budgets:
                rows.append({"instance_id": c.instance_id, "method": c.method, "seed": c.seed,
                             "work": b, "gap": self.gap_at(c, b)})
        return rows

    def to_dict(self) -> dict:
        return {
            "budgets": self.budgets,
            "seeds": self.seeds,
            "epsilon": self.epsilon,
            "instances": self.instances,
            "notices": self.notices,
            "summary": _jsonable(self.summary()),
            "cells": [_jsonable(asdict(c)) for c in self.cells],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["instance_id", "method", "seed", "work", "gap"])
            w.writeheader()
            for r in self.rows():
                w.writerow({**r, "gap": repr(r["gap"])})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _run_cell(inst: Instance, method: str, seed: int, epsilon: float, max_budget: int, vr_options) -> CellResult:
    from .solvers import SolveOptions, solve

    A, setup = inst.matrix, inst.setup
    if method == "vr":
        opts = SolveOptions(**(vr_options or {}))
        opts.seed = seed
        rep = solve(A, setup, epsilon, opts)
    elif method == "mirror-prox":
        per_iter = 2 * max(A.nnz, 1) + 2 * (setup.n + setup.m)
        rep = mirror_prox_baseline(A, setup, epsilon, max(1, max_budget // per_iter + 1), max_work=max_budget)
    elif method == "smd":
        T = max(1, max_budget // (2 * (setup.n + setup.m)))
        rep = sublinear_smd_baseline(A, setup, epsilon, T, seed)
    else:
        raise ValueError(f"unknown method '{method}', choose from {METHODS}")
    wte = next((r.work for r in rep.trace if r.gap <= epsilon), None)
    return CellResult(inst.instance_id, method, seed, rep.trace, wte, A.checksum)


def _compatible(method: str, setup: Setup) -> bool:
    return method != "smd" or setup.kind == SetupKind.L1L1


def run_benchmark(instances: Sequence[Instance], methods: Sequence[str], budgets: Sequence[int],
                  seeds: Sequence[int], epsilon: float, *, workers: int = 1,
                  vr_options: dict | None = None) -> BenchmarkResult:
    """Run every (instance, method, seed) cell and sample gaps at the budgets.

    Deterministic methods ignore the seed but are still run once per seed so
    that every method has the same number of cells.
    """
    if not instances or not methods or not seeds or not budgets:
        raise ValueError("benchmark needs at least one instance, method, seed and budget")
    for meth in methods:
        if meth not in METHODS:
            raise ValueError(f"unknown method '{meth}', choose from {METHODS}")
    budgets = sorted(int(b) for b in budgets)
    res = BenchmarkResult(budgets, list(seeds), epsilon)
    jobs = []
    for inst in instances:
        res.instances[inst.instance_id] = {"m": inst.matrix.m, "n": inst.matrix.n, "nnz": inst.matrix.nnz,
                                           "setup": inst.setup.kind.value, "checksum": inst.matrix.checksum}
        for meth in methods:
            if not _compatible(meth, inst.setup):
                res.notices.append(f"skipped {meth} on {inst.instance_id}: requires l1l1 setup")
                continue
            for s in seeds:
                jobs.append((inst, meth, s, epsilon, budgets[-1], vr_options))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res.cells = list(ex.map(_run_cell_star, jobs))
    else:
        res.cells = [_run_cell(*j) for j in jobs]
    return res


def _run_cell_star(args):
    return _run_cell(*args)
