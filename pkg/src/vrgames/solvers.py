"""Extragradient outer loops driven by variance-reduced inner loops.

The inner loop runs regularized stochastic mirror descent around a center
``w0`` and returns the average iterate; it serves as a relaxed proximal
oracle for the outer extragradient loop. ``solve`` wires parameters,
estimator, inner loop and outer loop together.

Work is counted in coordinate touches:

* one exact gradient (re-centering or extragradient step): nnz(A)
* one inner step: 2(n+m) for the estimate and 2(n+m) for the mirror step,
  plus the sparse row/column touches of the estimate
* one outer extragradient step and running-average update: 2(n+m)

Gap monitoring is not counted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .analysis import TraceRecord, duality_gap
from .estimators import (CLIPPED, DEFAULT_VARIANT, EstimatorState, FiniteSumEstimator,
                         estimate_into, exact_gradient, setup_lipschitz, variant_lipschitz)
from .geometry import (LOG_FLOOR, CompositeTerm, Point, Setup, SetupKind, bregman,
                       composite_fold, grad_r, mirror_step, theta, uniform_center)
from .matrix import SparseMatrix

DEFAULT_MAX_INNER_STEPS = 10 ** 7


class BudgetError(RuntimeError):
    pass


class NumericalFailure(FloatingPointError):
    pass


class TrivialInstance(ValueError):
    pass


def rceil(v: float) -> int:
    """Ceiling that ignores relative rounding noise below 1e-12."""
    return max(1, int(math.ceil(v * (1.0 - 1e-12))))


@dataclass
class WorkCounter:
    total: int = 0
    sparse_touches: int = 0

    def add(self, work: int, touches: int = 0) -> None:
        self.total += int(work)
        self.sparse_touches += int(touches)


@dataclass
class SolverConfig:
    alpha: float
    eta: float
    T: int
    K: int
    tau: float = math.inf
    epsilon: float = 0.0
    seed: int = 0
    variant: str = "l1l1"
    gap_check_every: int = 0
    early_stop: bool = False
    L: float = 0.0
    theta: float = 0.0
    oracle: str = "inner"
    N: int = 1

    def validate(self) -> None:
        for name in ("alpha", "eta", "tau"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("T", "K", "N"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.gap_check_every < 0:
            raise ValueError("gap_check_every must be >= 0")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["tau"] = None if math.isinf(self.tau) else self.tau
        return d


@dataclass
class StrongConfig:
    """Strong monotonicity moduli relative to r; rho and mu derive from them."""
    mu_x: float
    mu_y: float
    N_restart: int = 1

    def __post_init__(self):
        if self.mu_x < 0 or self.mu_y < 0:
            raise ValueError("strong convexity moduli must be nonnegative")

    @property
    def mu(self) -> float:
        return math.sqrt(self.mu_x * self.mu_y)

    @property
    def rho(self) -> float:
        return math.sqrt(self.mu_x / self.mu_y) if self.mu > 0 else 1.0

    @classmethod
    def from_composite(cls, term: CompositeTerm) -> "StrongConfig":
        return cls(term.lambda_x, term.lambda_y)


@dataclass
class SolveReport:
    final_point: Point
    measured_gap: float
    trace: list[TraceRecord]
    total_work: int
    sparse_touches: int = 0
    config: Optional[dict] = None
    converged: bool = False
    outer_iterations: int = 0
    method: str = "vr"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "measured_gap": self.measured_gap,
            "total_work": self.total_work,
            "sparse_touches": self.sparse_touches,
            "converged": self.converged,
            "outer_iterations": self.outer_iterations,
            "config": self.config,
            "final_point": {"x": self.final_point.x.tolist(), "y": self.final_point.y.tolist()},
            "trace": [asdict(r) for r in self.trace],
        }


# -- parameters ------------------------------------------------------------


# Practical mode: the theorem step constant is conservative; a 16x larger inner
# step (T shrinks accordingly) converged on every setup we benchmarked.
PRACTICAL_ETA_SCALE = 16.0


def default_params(setup: Setup, A: SparseMatrix, epsilon: float, variant: str | None = None,
                   oracle: str = "inner") -> SolverConfig:
    """Theorem parameters for the chosen estimator.

    alpha = max(eps/Theta, L sqrt((n+m)/nnz)), eta = alpha/(c L^2) with c = 10
    for centered estimators and 24 for clipped ones (8 under restarts),
    T = ceil(4/(eta alpha)), K = ceil(Theta alpha/eps), tau = 1/eta.
    With restarts the accuracy is split evenly between outer loop and oracle.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    variant = variant or DEFAULT_VARIANT[setup.kind]
    L = variant_lipschitz(A, variant, setup.kind)
    if L == 0:
        raise TrivialInstance("matrix is zero; every feasible point is a saddle point")
    th = theta(setup)
    if th == 0:
        raise TrivialInstance("the domain is a single point")
    n, m = setup.n, setup.m
    alpha = max(epsilon / th, L * math.sqrt((n + m) / A.nnz))
    if oracle == "restarted":
        c = 8.0
    elif variant in CLIPPED:
        c = 24.0
    else:
        c = 10.0
    eta = alpha / (c * L * L)
    T = rceil(4.0 / (eta * alpha))
    tau = 1.0 / eta if variant in CLIPPED else math.inf
    if oracle == "restarted":
        K = rceil(2.0 * th * alpha / epsilon)
        N = restart_phases(A, setup, L, alpha, epsilon / 2)
    elif oracle == "inner":
        K = rceil(th * alpha / epsilon)
        N = 1
    else:
        raise ValueError(f"unknown oracle '{oracle}', choose 'inner' or 'restarted'")
    return SolverConfig(alpha=alpha, eta=eta, T=T, K=K, tau=tau, epsilon=epsilon, variant=variant,
                        L=L, theta=th, oracle=oracle, N=N)


def gradient_bound(A: SparseMatrix, setup: Setup) -> float:
    """G with |g(z)|_* <= G on the domain."""
    return math.sqrt(2.0) * setup_lipschitz(A, setup.kind)


DIAMETER = math.sqrt(8.0)


def restart_phases(A: SparseMatrix, setup: Setup, L: float, alpha: float, epsilon: float) -> int:
    """Smallest N with N >= 1 + 2 log2(G(G + 2 L D) / (alpha eps))."""
    G = gradient_bound(A, setup)
    arg = G * (G + 2 * L * DIAMETER) / (alpha * epsilon)
    return max(1, math.ceil(1 + 2 * math.log2(max(arg, 1.0))))


def strong_params(setup: Setup, A: SparseMatrix, epsilon: float, composite: CompositeTerm,
                  variant: str | None = None) -> tuple[SolverConfig, StrongConfig]:
    """Parameters for the strongly monotone loop under block rescaling.

    alpha = L sqrt((n+m)/nnz); K is the smallest count with
    sqrt(2) G (rho + 1/rho) sqrt((alpha/(mu+alpha))^K Theta) <= eps, where
    G = L + B and B bounds the composite gradient on ball blocks.
    """
    strong = StrongConfig.from_composite(composite)
    if strong.mu <= 0:
        raise ValueError("strongly monotone loop needs lambda_x > 0 and lambda_y > 0")
    variant = variant or DEFAULT_VARIANT[setup.kind]
    L = variant_lipschitz(A, variant, setup.kind)
    if L == 0:
        raise TrivialInstance("matrix is zero")
    rho, mu = strong.rho, strong.mu
    th = theta(setup)
    if th == 0:
        raise TrivialInstance("the domain is a single point")
    n, m = setup.n, setup.m
    alpha = L * math.sqrt((n + m) / A.nnz)
    c = 24.0 if variant in CLIPPED else 10.0
    eta = alpha / (c * L * L)
    T = rceil(4.0 / (eta * alpha))
    tau = 1.0 / (eta * rho) if variant in CLIPPED else math.inf
    B = 0.0
    if not setup.x_simplex:
        B += composite.lambda_x
    if not setup.y_simplex:
        B += composite.lambda_y
    G = L + B
    target = 2 * G * G * (rho + 1 / rho) ** 2 * th / (epsilon * epsilon)
    K = rceil(math.log(max(target, 1.0 + 1e-12)) / math.log((mu + alpha) / alpha))
    cfg = SolverConfig(alpha=alpha, eta=eta, T=T, K=K, tau=tau, epsilon=epsilon, variant=variant,
                       L=L, theta=th)
    return cfg, strong


# -- inner loop ------------------------------------------------------------


@numba.njit(cache=True)
def _block_update(simplex, g, w, lw, r, lr, rw, cw, sw):
    """One mirror step on a block, in place. ``lw`` holds log w for simplex blocks."""
    tot = rw + cw + sw
    k = len(w)
    if simplex:
        mx = -np.inf
        for i in range(k):
            v = (rw * lr[i] + sw * lw[i] - g[i]) / tot
            lw[i] = v
            if v > mx:
                mx = v
        s = 0.0
        for i in range(k):
            s += math.exp(lw[i] - mx)
        ls = mx + math.log(s)
        for i in range(k):
            v = lw[i] - ls
            if v < LOG_FLOOR:
                v = LOG_FLOOR
            lw[i] = v
            w[i] = math.exp(v)
    else:
        nrm = 0.0
        for i in range(k):
            v = (rw * r[i] + sw * w[i] - g[i]) / tot
            w[i] = v
            nrm += v * v
        nrm = math.sqrt(nrm)
        if nrm > 1.0:
            for i in range(k):
                w[i] /= nrm


@numba.njit(cache=True)
def _floored_log(v):
    out = np.empty(len(v))
    for i in range(len(v)):
        out[i] = math.log(v[i]) if v[i] > 0 else LOG_FLOOR
        if out[i] < LOG_FLOOR:
            out[i] = LOG_FLOOR
    return out


@numba.njit(cache=True)
def _inner_kernel(code, indptr, indices, data, cptr, cidx, cdat, row_sq, col_sq, al_prob, al_alias,
                  x0, y0, g0x, g0y, tau, rng,
                  sx, sy, rx, ry, rwx, rwy, cwx, cwy, swx, swy, T, x_simplex, y_simplex,
                  avgx, avgy, lastx, lasty):
    """Run T regularized steps; return sparse touches or -t on a non-finite iterate."""
    n = len(sx)
    m = len(sy)
    wx = sx.copy()
    wy = sy.copy()
    lwx = _floored_log(wx) if x_simplex else np.zeros(1)
    lwy = _floored_log(wy) if y_simplex else np.zeros(1)
    lrx = _floored_log(rx) if x_simplex else np.zeros(1)
    lry = _floored_log(ry) if y_simplex else np.zeros(1)
    gx = np.empty(n)
    gy = np.empty(m)
    bufm = np.empty(m)
    bufn = np.empty(n)
    avgx[:] = 0.0
    avgy[:] = 0.0
    touches = 0
    for t in range(1, T + 1):
        touches += estimate_into(code, indptr, indices, data, cptr, cidx, cdat, row_sq, col_sq,
                                 al_prob, al_alias, wx, wy, x0, y0, g0x, g0y, tau, rng,
                                 bufm, bufn, gx, gy)
        if not (math.isfinite(gx.sum()) and math.isfinite(gy.sum())):
            return -t
        _block_update(x_simplex, gx, wx, lwx, rx, lrx, rwx, cwx, swx)
        _block_update(y_simplex, gy, wy, lwy, ry, lry, rwy, cwy, swy)
        if not (math.isfinite(wx.sum()) and math.isfinite(wy.sum())):
            return -t
        inv = 1.0 / t
        for i in range(n):
            avgx[i] += (wx[i] - avgx[i]) * inv
        for i in range(m):
            avgy[i] += (wy[i] - avgy[i]) * inv
    lastx[:] = wx
    lasty[:] = wy
    return touches


@dataclass
class InnerResult:
    average: Point
    last: Point
    work: int
    touches: int


def _weights(setup: Setup, w) -> tuple[float, float]:
    wx, wy = w if isinstance(w, tuple) else (w, w)
    return wx * setup.rho, wy / setup.rho


def run_inner(estimator, w0: Point, reg_weight, eta: float, T: int, *, start: Point | None = None,
              composite: CompositeTerm | None = None, backend: str = "auto") -> InnerResult:
    """Steps ``w_t = argmin <g~(w_{t-1}), w> + reg V_{w0}(w) + fold(composite) + V_{w_{t-1}}(w)/eta``.

    The estimator's own center may differ from the regularization anchor
    ``w0`` and from the start point (restarts use all three).
    """
    setup = estimator.setup
    start = w0 if start is None else start
    composite = composite or CompositeTerm()
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if backend == "auto":
        backend = "python" if isinstance(estimator, FiniteSumEstimator) else "numba"
    n, m = setup.n, setup.m
    if backend == "numba":
        rwx, rwy = _weights(setup, reg_weight)
        cwx, cwy = composite.lambda_x, composite.lambda_y
        swx, swy = _weights(setup, 1.0 / eta)
        avgx, avgy = np.empty(n), np.empty(m)
        lastx, lasty = np.empty(n), np.empty(m)
        res = _inner_kernel(*estimator.kernel_args(), estimator.w0.x, estimator.w0.y,
                            estimator.g0x, estimator.g0y, estimator.tau, estimator.rng,
                            start.x, start.y, w0.x, w0.y, rwx, rwy, cwx, cwy, swx, swy,
                            int(T), setup.x_simplex, setup.y_simplex, avgx, avgy, lastx, lasty)
        if res < 0:
            raise NumericalFailure(f"non-finite inner iterate at step {-res}")
        touches = int(res)
        avg = Point(avgx, avgy, setup.kind)
        last = Point(lastx, lasty, setup.kind)
    elif backend == "python":
        anchors_fixed = [(w0, reg_weight)] + composite_fold(composite, setup)
        w = start.copy()
        sx, sy = np.zeros(n), np.zeros(m)
        touches = 0
        for t in range(1, T + 1):
            est = estimator.estimate(w)
            if not (np.all(np.isfinite(est.gx)) and np.all(np.isfinite(est.gy))):
                raise NumericalFailure(f"non-finite gradient estimate at step {t}")
            touches += est.work - 2 * (n + m)
            w = mirror_step(setup, (est.gx, est.gy), anchors_fixed + [(w, 1.0 / eta)])
            sx += (w.x - sx) / t
            sy += (w.y - sy) / t
        avg = Point(sx, sy, setup.kind)
        last = w
    else:
        raise ValueError(f"unknown backend '{backend}'")
    work = 4 * T * (n + m) + touches
    return InnerResult(avg, last, work, touches)


def inner_loop(estimator, w0: Point, alpha: float, eta: float, T: int, *,
               composite: CompositeTerm | None = None, counter: WorkCounter | None = None,
               backend: str = "auto") -> Point:
    """Average of T regularized mirror-descent iterates around ``w0`` (weight alpha/2)."""
    res = run_inner(estimator, w0, alpha / 2.0, eta, T, composite=composite, backend=backend)
    if counter is not None:
        counter.add(res.work, res.touches)
    return res.average


def restarted_inner_loop(recenter: Callable[[Point], object], w0: Point, alpha: float, eta: float,
                         T: int, N: int, rng: np.random.Generator, *,
                         composite: CompositeTerm | None = None, counter: WorkCounter | None = None,
                         history: list | None = None, backend: str = "auto") -> Point:
    """N phases; each re-centers at the previous output, draws T^ ~ U{1..T}
    and returns the last iterate of a T^-step run regularized toward the
    original ``w0`` with weight alpha."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    w_hat = w0
    if history is not None:
        history.append(w_hat)
    for _ in range(N):
        estimator = recenter(w_hat)
        if counter is not None:
            counter.add(_center_work(estimator))
        T_hat = int(rng.integers(1, T + 1))
        res = run_inner(estimator, w0, alpha, eta, T_hat, start=w_hat, composite=composite,
                        backend=backend)
        if counter is not None:
            counter.add(res.work, res.touches)
        w_hat = res.last
        if history is not None:
            history.append(w_hat)
    return w_hat


def _center_work(estimator) -> int:
    if isinstance(estimator, EstimatorState):
        return max(estimator.matrix.nnz, 1)
    return estimator.problem.K * (len(estimator.g0x) + len(estimator.g0y))


def proximal_point_reference(A: SparseMatrix, setup: Setup, w0: Point, alpha: float, *,
                             composite: CompositeTerm | None = None, tol: float = 1e-12,
                             max_iter: int = 200000) -> tuple[Point, int]:
    """High-accuracy ``z_alpha``: the solution of the alpha-regularized
    variational inequality around w0, via deterministic extragradient with the
    regularizer kept exact. Returns the point and the iterations used."""
    composite = composite or CompositeTerm()
    L = setup_lipschitz(A, setup.kind)
    step = 1.0 / max(2.0 * L, 1e-300)
    fixed = [(w0, alpha)] + composite_fold(composite, setup)
    z = w0.copy()
    for it in range(1, max_iter + 1):
        g = exact_gradient(A, z)
        zh = mirror_step(setup, (g.gx, g.gy), fixed + [(z, 1.0 / step)])
        gh = exact_gradient(A, zh)
        zn = mirror_step(setup, (gh.gx, gh.gy), fixed + [(z, 1.0 / step)])
        delta = max(np.abs(zn.x - z.x).max(), np.abs(zn.y - z.y).max())
        z = zn
        if delta < tol:
            return z, it
    return z, max_iter


# -- outer loops -----------------------------------------------------------


def _grad_composite(setup: Setup, composite: CompositeTerm, z: Point):
    if composite.is_zero:
        return 0.0, 0.0
    rx, ry = grad_r(setup, z)
    return composite.lambda_x * rx, composite.lambda_y * ry


def outer_loop(oracle: Callable[[Point], Point], A: SparseMatrix, setup: Setup, alpha: float, K: int, *,
               start: Point | None = None, composite: CompositeTerm | None = None,
               counter: WorkCounter | None = None, gap_check_every: int = 1,
               early_stop: bool = False, epsilon: float = 0.0) -> SolveReport:
    """Extragradient loop over a relaxed proximal oracle; returns the average
    of the half-iterates."""
    composite = composite or CompositeTerm()
    counter = counter or WorkCounter()
    n, m = setup.n, setup.m
    z = (start or uniform_center(setup)).copy()
    avg = None
    trace: list[TraceRecord] = []
    k = 0
    gap = math.inf
    converged = False
    for k in range(1, K + 1):
        z_half = oracle(z)
        g = exact_gradient(A, z_half)
        cx, cy = _grad_composite(setup, composite, z_half)
        z = mirror_step(setup, (g.gx + cx, g.gy + cy), [(z, alpha)])
        counter.add(g.work + 2 * (n + m))
        if avg is None:
            avg = z_half.copy()
        else:
            avg = Point(avg.x + (z_half.x - avg.x) / k, avg.y + (z_half.y - avg.y) / k, setup.kind)
        check = (gap_check_every and k % gap_check_every == 0) or k == K
        if check:
            gap = duality_gap(setup, A, avg, composite)
            trace.append(TraceRecord(k, counter.total, gap))
            if early_stop and gap <= epsilon:
                converged = True
                break
    converged = converged or gap <= epsilon
    return SolveReport(avg, gap, trace, counter.total, counter.sparse_touches,
                       converged=converged, outer_iterations=k)


def outer_loop_strongly_monotone(oracle: Callable[[Point], Point], A: SparseMatrix, setup: Setup,
                                 composite: CompositeTerm, strong: StrongConfig, alpha: float, K: int, *,
                                 start: Point | None = None, reference: Point | None = None,
                                 counter: WorkCounter | None = None, gap_check_every: int = 1,
                                 early_stop: bool = False, epsilon: float = 0.0) -> SolveReport:
    """Extragradient with an extra pull ``mu V_{z_{k-1/2}}``; returns the last
    iterate. ``setup.rho`` must equal ``strong.rho``."""
    if strong.mu <= 0:
        raise ValueError("mu = 0: use outer_loop instead")
    if not math.isclose(setup.rho, strong.rho, rel_tol=1e-12):
        raise ValueError(f"setup rho {setup.rho} differs from sqrt(mu_x/mu_y) = {strong.rho}")
    counter = counter or WorkCounter()
    n, m = setup.n, setup.m
    z = (start or uniform_center(setup)).copy()
    trace: list[TraceRecord] = []
    gap = math.inf
    converged = False
    k = 0
    for k in range(1, K + 1):
        z_half = oracle(z)
        g = exact_gradient(A, z_half)
        cx, cy = _grad_composite(setup, composite, z_half)
        z = mirror_step(setup, (g.gx + cx, g.gy + cy), [(z, alpha), (z_half, strong.mu)])
        counter.add(g.work + 2 * (n + m))
        check = (gap_check_every and k % gap_check_every == 0) or k == K
        if check:
            gap = duality_gap(setup, A, z, composite)
            div = bregman(setup, z, reference) if reference is not None else None
            trace.append(TraceRecord(k, counter.total, gap, div))
            if early_stop and gap <= epsilon:
                converged = True
                break
    converged = converged or gap <= epsilon
    return SolveReport(z, gap, trace, counter.total, counter.sparse_touches,
                       converged=converged, outer_iterations=k)


# -- top-level solve -------------------------------------------------------


@dataclass
class SolveOptions:
    variant: Optional[str] = None
    theorem_mode: bool = True
    oracle: str = "inner"
    seed: int = 0
    gap_check_every: Optional[int] = None
    early_stop: Optional[bool] = None
    alpha: Optional[float] = None
    eta: Optional[float] = None
    T: Optional[int] = None
    K: Optional[int] = None
    tau: Optional[float] = None
    N: Optional[int] = None
    composite: Optional[CompositeTerm] = None
    strongly_monotone: bool = False
    start: Optional[Point] = None
    reference: Optional[Point] = None
    max_inner_steps: int = DEFAULT_MAX_INNER_STEPS
    backend: str = "auto"


def _apply_overrides(cfg: SolverConfig, opts: SolveOptions, practical_scale: float = 1.0) -> SolverConfig:
    """Apply user overrides; eta follows alpha and T follows (eta, alpha) unless set explicitly."""
    given = {name: getattr(opts, name) for name in ("alpha", "eta", "T", "K", "tau", "N")
             if getattr(opts, name) is not None}
    if opts.theorem_mode and given:
        raise ValueError(f"theorem mode fixes {', '.join(given)}; drop the override or disable theorem mode")
    base_alpha = cfg.alpha
    for name, v in given.items():
        setattr(cfg, name, v)
    if "eta" not in given:
        cfg.eta *= practical_scale * cfg.alpha / base_alpha
    if "T" not in given and ("alpha" in given or "eta" in given or practical_scale != 1.0):
        cfg.T = rceil(4.0 / (cfg.eta * cfg.alpha))
    return cfg


def solve(A: SparseMatrix, setup: Setup, epsilon: float, options: SolveOptions | None = None) -> SolveReport:
    """Variance-reduced extragradient solve to expected gap epsilon.

    Theorem mode runs exactly K outer steps with theorem parameters. Practical
    mode accepts overrides and stops early once the measured gap is <= epsilon.
    """
    opts = options or SolveOptions()
    if (setup.n, setup.m) != (A.n, A.m):
        raise ValueError(f"setup is {setup.m}x{setup.n} but matrix is {A.m}x{A.n}")
    composite = opts.composite or CompositeTerm()
    strong_mode = opts.strongly_monotone
    try:
        if strong_mode:
            cfg, strong = strong_params(setup, A, epsilon, composite, opts.variant)
            setup = setup.with_rho(strong.rho)
        else:
            cfg = default_params(setup, A, epsilon, opts.variant, opts.oracle)
    except TrivialInstance:
        z = opts.start or uniform_center(setup)
        gap = duality_gap(setup, A, z, composite)
        return SolveReport(z, gap, [TraceRecord(0, 0, gap)], 0, 0, config={"trivial": True},
                           converged=gap <= epsilon, outer_iterations=0)
    cfg.seed = opts.seed
    practical_scale = 1.0 if opts.theorem_mode or strong_mode else PRACTICAL_ETA_SCALE
    cfg = _apply_overrides(cfg, opts, practical_scale)
    if opts.theorem_mode:
        cfg.early_stop = False
        cfg.gap_check_every = opts.gap_check_every if opts.gap_check_every is not None else 0
    else:
        cfg.early_stop = True if opts.early_stop is None else opts.early_stop
        cfg.gap_check_every = 1 if opts.gap_check_every is None else opts.gap_check_every
    if cfg.variant in CLIPPED and opts.tau is None and cfg.tau != math.inf:
        cfg.tau = 1.0 / (cfg.eta * setup.rho)
    cfg.validate()
    steps = cfg.K * cfg.T * (cfg.N if cfg.oracle == "restarted" else 1)
    if steps > opts.max_inner_steps:
        raise BudgetError(f"K*T = {steps} inner steps exceed the cap of {opts.max_inner_steps}")

    rng = np.random.default_rng(cfg.seed)
    center = opts.start or uniform_center(setup)
    estimator = EstimatorState(A, setup, center, cfg.variant, cfg.tau, rng)
    counter = WorkCounter()

    if cfg.oracle == "restarted":
        def recenter(w):
            estimator.recenter(w)
            return estimator

        def oracle(z):
            return restarted_inner_loop(recenter, z, cfg.alpha, cfg.eta, cfg.T, cfg.N, rng,
                                        composite=composite, counter=counter, backend=opts.backend)
    else:
        def oracle(z):
            estimator.recenter(z)
            counter.add(max(A.nnz, 1))
            return inner_loop(estimator, z, cfg.alpha, cfg.eta, cfg.T, composite=composite,
                              counter=counter, backend=opts.backend)

    if strong_mode:
        report = outer_loop_strongly_monotone(oracle, A, setup, composite, strong, cfg.alpha, cfg.K,
                                              start=opts.start, reference=opts.reference, counter=counter,
                                              gap_check_every=cfg.gap_check_every,
                                              early_stop=cfg.early_stop, epsilon=epsilon)
    else:
        report = outer_loop(oracle, A, setup, cfg.alpha, cfg.K, start=opts.start, composite=composite,
                            counter=counter, gap_check_every=cfg.gap_check_every,
                            early_stop=cfg.early_stop, epsilon=epsilon)
    report.config = cfg.as_dict()
    report.config["setup"] = setup.kind.value
    report.config["rho"] = setup.rho
    if strong_mode:
        report.config.update(mu_x=strong.mu_x, mu_y=strong.mu_y)
    return report


def expected_work(cfg: SolverConfig, A: SparseMatrix, sparse_touches: int, K: int | None = None) -> int:
    """Closed-form work of an inner-oracle solve: K (2 nnz + 2(n+m) + 4T(n+m)) + touches."""
    K = cfg.K if K is None else K
    n, m = A.n, A.m
    return K * (2 * max(A.nnz, 1) + 2 * (n + m) + 4 * cfg.T * (n + m)) + sparse_touches
