"""Gradient oracles for the bilinear map ``g(z) = (A^T y, -A x)``.

Every stochastic variant has the form

    g~(w) = g(w0) + (A_i: * dy_i / p_i,  -clip(A_:j * dx_j / q_j))

with ``dx = x - x0``, ``dy = y - y0`` and variant-specific sampling weights.
The sampling and assembly live in a single jitted kernel so the Python API
and the jitted inner loop draw bit-identical streams from the same
``numpy.random.Generator``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .geometry import Point, Setup, SetupKind, block_dual_norm_sq, dual_norm_sq, norm_sq
from .matrix import SparseMatrix

# kernel variant codes
L1L1 = 0
L2L1_BASIC = 1
L2L1_CLIPPED = 2
L2L1_OBLIVIOUS = 3
L2L2_DYNAMIC_SQ = 4
L2L2_FACTORED = 5
L2L2_NORM_WEIGHTED = 6
EXACT = 7

VARIANT_CODES = {
    "l1l1": L1L1,
    "l2l1_basic": L2L1_BASIC,
    "l2l1_clipped": L2L1_CLIPPED,
    "l2l1_oblivious": L2L1_OBLIVIOUS,
    "l2l2_dynamic_sq": L2L2_DYNAMIC_SQ,
    "l2l2_factored": L2L2_FACTORED,
    "l2l2_norm_weighted": L2L2_NORM_WEIGHTED,
    "exact": EXACT,
}

VARIANT_SETUP = {
    "l1l1": SetupKind.L1L1,
    "l2l1_basic": SetupKind.L2L1,
    "l2l1_clipped": SetupKind.L2L1,
    "l2l1_oblivious": SetupKind.L2L1,
    "l2l2_dynamic_sq": SetupKind.L2L2,
    "l2l2_factored": SetupKind.L2L2,
    "l2l2_norm_weighted": SetupKind.L2L2,
}

DEFAULT_VARIANT = {
    SetupKind.L1L1: "l1l1",
    SetupKind.L2L1: "l2l1_clipped",
    SetupKind.L2L2: "l2l2_dynamic_sq",
}

CLIPPED = ("l2l1_clipped", "l2l1_oblivious")


class DegenerateDistributionError(ValueError):
    pass


def setup_lipschitz(A: SparseMatrix, kind: SetupKind) -> float:
    """Lipschitz bound of g in the setup norm."""
    kind = SetupKind(kind)
    if kind == SetupKind.L1L1:
        return A.norm_max
    if kind == SetupKind.L2L1:
        return A.norm_2_to_inf
    return A.norm_fro


def variant_lipschitz(A: SparseMatrix, variant: str, kind: SetupKind | None = None) -> float:
    """Centering constant L of an estimator variant."""
    if variant == "l1l1":
        return A.norm_max
    if variant == "l2l1_basic":
        return float(np.sqrt(np.sum(A.col_max_abs ** 2)))
    if variant in CLIPPED:
        return A.norm_2_to_inf
    if variant.startswith("l2l2"):
        return A.norm_fro
    if variant == "exact":
        return setup_lipschitz(A, kind or SetupKind.L1L1)
    raise ValueError(f"unknown estimator variant '{variant}'")


@dataclass
class GradientEstimate:
    gx: np.ndarray
    gy: np.ndarray
    work: int


# -- sampling primitives -------------------------------------------------


@numba.njit(cache=True)
def _draw(weights, total, rng):
    """Index k with probability weights[k]/total via one uniform and a scan."""
    u = rng.random() * total
    acc = 0.0
    last = -1
    for k in range(len(weights)):
        wk = weights[k]
        if wk > 0.0:
            acc += wk
            last = k
            if u < acc:
                return k
    return last


def sample_weighted(weights, rng: np.random.Generator) -> int:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = float(w.sum())
    if total <= 0.0:
        raise DegenerateDistributionError("all sampling weights are zero")
    return int(_draw(w, total, rng))


@dataclass
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    def __len__(self):
        return len(self.prob)


@numba.njit(cache=True)
def _build_alias_into(p, prob, alias):
    """Vose's method on ``p`` (sums to 1); writes local indices into ``alias``."""
    k = len(p)
    scaled = p * k
    small = np.empty(k, dtype=np.int64)
    large = np.empty(k, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(k):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        l = large[nl]
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small[ns] = l
            ns += 1
        else:
            large[nl] = l
            nl += 1
    for t in range(nl):
        prob[large[t]] = 1.0
        alias[large[t]] = large[t]
    for t in range(ns):
        prob[small[t]] = 1.0
        alias[small[t]] = small[t]


@numba.njit(cache=True)
def _sample_alias(prob, alias, start, length, rng):
    u = rng.random() * length
    k = int(u)
    if k >= length:
        k = length - 1
    if u - k < prob[start + k]:
        return k
    return alias[start + k]


def build_alias(probs) -> AliasTable:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("alias table needs a non-empty probability vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("invalid probability vector: entries must be >= 0 and sum to 1")
    prob = np.zeros(len(p))
    alias = np.zeros(len(p), dtype=np.int64)
    _build_alias_into(p / p.sum(), prob, alias)
    return AliasTable(prob, alias)


def sample_alias(table: AliasTable, rng: np.random.Generator) -> int:
    return int(_sample_alias(table.prob, table.alias, 0, len(table.prob), rng))


@dataclass
class RowAliasTables:
    """Alias tables over each row's nonzeros, q_j = A_ij^2 / |A_i:|^2.

    Stored flat, aligned with the CSR arrays of the matrix; ``alias`` holds
    positions local to the row.
    """
    prob: np.ndarray
    alias: np.ndarray

    def row(self, A: SparseMatrix, i: int) -> AliasTable:
        lo, hi = A.indptr[i], A.indptr[i + 1]
        return AliasTable(self.prob[lo:hi], self.alias[lo:hi])


@numba.njit(cache=True)
def _build_row_alias(indptr, data, prob, alias):
    for i in range(len(indptr) - 1):
        lo = indptr[i]
        hi = indptr[i + 1]
        if hi == lo:
            continue
        sq = data[lo:hi] ** 2
        _build_alias_into(sq / sq.sum(), prob[lo:hi], alias[lo:hi])


def row_alias_tables(A: SparseMatrix) -> RowAliasTables:
    """Per-row alias tables; depend only on A, so built once per matrix."""
    cached = getattr(A, "_row_alias", None)
    if cached is None:
        prob = np.zeros(A.nnz)
        alias = np.zeros(A.nnz, dtype=np.int64)
        _build_row_alias(A.indptr, A.data, prob, alias)
        cached = RowAliasTables(prob, alias)
        A._row_alias = cached
    return cached


# -- the estimator kernel --------------------------------------------------


@numba.njit(cache=True)
def _clip(v, tau):
    if v > tau:
        return tau
    if v < -tau:
        return -tau
    return v


@numba.njit(cache=True)
def estimate_into(code, indptr, indices, data, cptr, cidx, cdat,
                  row_sq, col_sq, al_prob, al_alias,
                  x, y, x0, y0, g0x, g0y, tau, rng,
                  wy, wx, outx, outy):
    """Write one estimate into (outx, outy); return the number of sparse touches.

    ``wy`` (length m) and ``wx`` (length n) are scratch buffers.
    """
    m = len(y)
    n = len(x)
    touches = 0
    if code == 7:
        for j in range(n):
            outx[j] = 0.0
        for i in range(m):
            acc = 0.0
            yi = y[i]
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
                outx[indices[k]] += data[k] * yi
            outy[i] = -acc
        return 2 * len(data)

    outx[:] = g0x
    outy[:] = g0y

    # y difference drives the x-block correction; i is drawn first
    total = 0.0
    nonzero = False
    for i in range(m):
        d = y[i] - y0[i]
        if d != 0.0:
            nonzero = True
        if code == 4:
            w = d * d
        elif code == 5:
            w = row_sq[i]
        elif code == 6:
            w = math.sqrt(row_sq[i]) * abs(d)
        else:
            w = abs(d)
        wy[i] = w
        total += w
    if nonzero and total > 0.0:
        i = _draw(wy, total, rng)
        scale = (y[i] - y0[i]) * total / wy[i]
        for k in range(indptr[i], indptr[i + 1]):
            outx[indices[k]] += data[k] * scale
        touches += indptr[i + 1] - indptr[i]

    total = 0.0
    nonzero = False
    for j in range(n):
        d = x[j] - x0[j]
        if d != 0.0:
            nonzero = True
        if code == 0:
            w = abs(d)
        elif code == 5:
            w = col_sq[j]
        elif code == 6:
            w = math.sqrt(col_sq[j]) * abs(d)
        else:
            w = d * d
        wx[j] = w
        total += w
    if not nonzero:
        return touches

    if code == 3:
        for r in range(m):
            lo = indptr[r]
            hi = indptr[r + 1]
            if hi == lo:
                continue
            pos = lo + _sample_alias(al_prob, al_alias, lo, hi - lo, rng)
            a = data[pos]
            v = (x[indices[pos]] - x0[indices[pos]]) * row_sq[r] / a
            outy[r] -= _clip(v, tau)
            touches += 1
        return touches

    if total > 0.0:
        j = _draw(wx, total, rng)
        scale = (x[j] - x0[j]) * total / wx[j]
        clip = code == 2
        for k in range(cptr[j], cptr[j + 1]):
            v = cdat[k] * scale
            if clip:
                v = _clip(v, tau)
            outy[cidx[k]] -= v
        touches += cptr[j + 1] - cptr[j]
    return touches


def exact_gradient(A: SparseMatrix, z: Point) -> GradientEstimate:
    """``g(z) = (A^T y, -A x)``."""
    if z.x.shape != (A.n,) or z.y.shape != (A.m,):
        raise ValueError(f"point of shape ({z.x.shape}, {z.y.shape}) does not match {A.m}x{A.n} matrix")
    return GradientEstimate(A.matvec_transpose(z.y), -A.matvec(z.x), max(A.nnz, 1))


class EstimatorState:
    """Centered estimator for one matrix, re-centered by the outer loop.

    Holds the center ``w0``, the cached ``g(w0)``, the clipping threshold and
    the random stream. ``variant`` names an entry of ``VARIANT_CODES``.
    """

    def __init__(self, matrix: SparseMatrix, setup: Setup, w0: Point, variant: str | None = None,
                 tau: float = math.inf, rng: np.random.Generator | int | None = None):
        variant = variant or DEFAULT_VARIANT[setup.kind]
        if variant not in VARIANT_CODES:
            raise ValueError(f"unknown estimator variant '{variant}', choose from {sorted(VARIANT_CODES)}")
        need = VARIANT_SETUP.get(variant)
        if need is not None and need != setup.kind:
            raise ValueError(f"variant '{variant}' requires setup {need.value}, got {setup.kind.value}")
        if variant in CLIPPED and not tau > 0:
            raise ValueError(f"variant '{variant}' needs tau > 0, got {tau}")
        self.matrix = matrix
        self.setup = setup
        self.variant = variant
        self.code = VARIANT_CODES[variant]
        self.tau = float(tau)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        if variant == "l2l1_oblivious":
            self.alias_tables = row_alias_tables(matrix)
            self._al = (self.alias_tables.prob, self.alias_tables.alias)
        else:
            self.alias_tables = None
            self._al = (np.zeros(1), np.zeros(1, dtype=np.int64))
        self._wx = np.empty(matrix.n)
        self._wy = np.empty(matrix.m)
        self.recenter(w0)

    def recenter(self, w0: Point) -> int:
        """Move the center to ``w0``; returns the work of the exact gradient."""
        self.w0 = w0.copy()
        g = exact_gradient(self.matrix, self.w0)
        self.g0x, self.g0y = g.gx, g.gy
        return g.work

    @property
    def g0(self) -> tuple[np.ndarray, np.ndarray]:
        return self.g0x, self.g0y

    def kernel_args(self):
        A = self.matrix
        return (self.code, A.indptr, A.indices, A.data, A.col_indptr, A.col_indices, A.col_data,
                A.row_norms_sq, A.col_norms_sq, self._al[0], self._al[1])

    def estimate(self, w: Point) -> GradientEstimate:
        A = self.matrix
        outx = np.empty(A.n)
        outy = np.empty(A.m)
        touches = estimate_into(*self.kernel_args(), w.x, w.y, self.w0.x, self.w0.y,
                                self.g0x, self.g0y, self.tau, self.rng,
                                self._wy, self._wx, outx, outy)
        return GradientEstimate(outx, outy, 2 * (A.n + A.m) + int(touches))


def _estimate_as(state: EstimatorState, w: Point, variants: Sequence[str]) -> GradientEstimate:
    if state.variant not in variants:
        raise ValueError(f"estimator state holds variant '{state.variant}', expected one of {list(variants)}")
    return state.estimate(w)


def estimate_l1l1(state: EstimatorState, w: Point) -> GradientEstimate:
    return _estimate_as(state, w, ("l1l1",))


def estimate_l2l1_basic(state: EstimatorState, w: Point) -> GradientEstimate:
    return _estimate_as(state, w, ("l2l1_basic",))


def estimate_l2l1_clipped(state: EstimatorState, w: Point) -> GradientEstimate:
    return _estimate_as(state, w, ("l2l1_clipped",))


def estimate_l2l1_oblivious(state: EstimatorState, w: Point) -> GradientEstimate:
    return _estimate_as(state, w, ("l2l1_oblivious",))


def estimate_l2l2(state: EstimatorState, w: Point, variant: str | None = None) -> GradientEstimate:
    if variant is not None and f"l2l2_{variant}" != state.variant and variant != state.variant:
        raise ValueError(f"estimator state holds variant '{state.variant}', asked for '{variant}'")
    return _estimate_as(state, w, ("l2l2_dynamic_sq", "l2l2_factored", "l2l2_norm_weighted"))


# -- finite sums ---------------------------------------------------------

GradientMap = Callable[[Point], tuple[np.ndarray, np.ndarray]]


@dataclass
class FiniteSumProblem:
    """``g = (1/K) sum_k g_k`` with each g_k L_k-Lipschitz."""
    components: list[GradientMap]
    lipschitz: np.ndarray

    def __post_init__(self):
        self.lipschitz = np.asarray(self.lipschitz, dtype=np.float64)
        if len(self.components) == 0 or len(self.components) != len(self.lipschitz):
            raise ValueError("need one Lipschitz constant per component")
        if np.any(self.lipschitz <= 0):
            raise ValueError("Lipschitz constants must be positive")

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def probs(self) -> np.ndarray:
        return self.lipschitz / self.lipschitz.sum()

    @property
    def mean_lipschitz(self) -> float:
        return float(self.lipschitz.mean())

    def full_gradient(self, z: Point) -> tuple[np.ndarray, np.ndarray]:
        gx, gy = self.components[0](z)
        gx, gy = gx.copy(), gy.copy()
        for g in self.components[1:]:
            a, b = g(z)
            gx += a
            gy += b
        return gx / self.K, gy / self.K


def bilinear_finite_sum(matrices: Sequence[SparseMatrix], kind: SetupKind) -> FiniteSumProblem:
    """Components ``g_k(z) = (A_k^T y, -A_k x)`` with setup-norm Lipschitz bounds."""
    def make(Ak):
        return lambda z: (Ak.matvec_transpose(z.y), -Ak.matvec(z.x))
    lips = [max(setup_lipschitz(Ak, kind), 1e-300) for Ak in matrices]
    return FiniteSumProblem([make(Ak) for Ak in matrices], np.array(lips))


def estimate_finite_sum(problem: FiniteSumProblem, w0: Point, g_full_at_w0, w: Point,
                        rng: np.random.Generator) -> GradientEstimate:
    """``(g_k(w) - g_k(w0)) / (p_k K) + g(w0)`` with ``k ~ p``."""
    p = problem.probs
    k = sample_weighted(p, rng)
    a = problem.components[k](w)
    b = problem.components[k](w0)
    scale = 1.0 / (p[k] * problem.K)
    gx = g_full_at_w0[0] + scale * (a[0] - b[0])
    gy = g_full_at_w0[1] + scale * (a[1] - b[1])
    return GradientEstimate(gx, gy, 2 * (len(gx) + len(gy)))


class FiniteSumEstimator:
    """EstimatorState-like wrapper so finite sums plug into the inner loop."""

    variant = "finite_sum"

    def __init__(self, problem: FiniteSumProblem, setup: Setup, w0: Point,
                 rng: np.random.Generator | int | None = None):
        self.problem = problem
        self.setup = setup
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.recenter(w0)

    def recenter(self, w0: Point) -> int:
        self.w0 = w0.copy()
        self.g0x, self.g0y = self.problem.full_gradient(self.w0)
        return self.problem.K * (len(self.g0x) + len(self.g0y))

    @property
    def g0(self):
        return self.g0x, self.g0y

    def estimate(self, w: Point) -> GradientEstimate:
        return estimate_finite_sum(self.problem, self.w0, self.g0, w, self.rng)


# -- exhaustive enumeration oracle -----------------------------------------

OUTCOME_GUARD = 10 ** 6


class OutcomeSpaceTooLarge(ValueError):
    pass


@dataclass
class Moments:
    """Exact moments of an estimator at one query point.

    ``centered_sq`` is E|g~ - g(w0)|_*^2, ``deviation_sq`` is E|g~ - g(w)|_*^2,
    ``x_sq`` is E|g~^x - g0^x|_*^2 (block dual norm), ``y_sq[i]`` is
    E[(g~^y - g0^y)_i^2], ``max_outcome_sq`` the largest |g~ - g0|_*^2 over
    outcomes and ``max_y_sup`` the largest |g~^y - g0^y|_inf. Quantities that
    need the joint law of independent per-row draws are None when the joint
    outcome space exceeds the guard.
    """
    outcomes: int
    prob_total: float
    mean_x: np.ndarray
    mean_y: np.ndarray
    x_sq: float
    y_sq: np.ndarray
    max_y_sup: float
    centered_sq: Optional[float] = None
    deviation_sq: Optional[float] = None
    max_outcome_sq: Optional[float] = None
    outcome_sqs: list = field(default_factory=list, repr=False)


def _row_weights(variant: str, dy: np.ndarray, row_sq: np.ndarray) -> np.ndarray:
    if variant == "l2l2_dynamic_sq":
        return dy * dy
    if variant == "l2l2_factored":
        return row_sq.copy()
    if variant == "l2l2_norm_weighted":
        return np.sqrt(row_sq) * np.abs(dy)
    return np.abs(dy)


def _col_weights(variant: str, dx: np.ndarray, col_sq: np.ndarray) -> np.ndarray:
    if variant == "l1l1":
        return np.abs(dx)
    if variant == "l2l2_factored":
        return col_sq.copy()
    if variant == "l2l2_norm_weighted":
        return np.sqrt(col_sq) * np.abs(dx)
    return dx * dx


def sampling_distributions(state: EstimatorState, w: Point) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (p over rows, q over columns) used at ``w``; zeros for a degenerate block."""
    A = state.matrix
    dx, dy = w.x - state.w0.x, w.y - state.w0.y
    p = _row_weights(state.variant, dy, A.row_norms_sq)
    q = _col_weights(state.variant, dx, A.col_norms_sq)
    p = p / p.sum() if np.any(dy != 0) and p.sum() > 0 else np.zeros_like(p)
    q = q / q.sum() if np.any(dx != 0) and q.sum() > 0 else np.zeros_like(q)
    return p, q


def enumerate_moments(state, w: Point, guard: int = OUTCOME_GUARD) -> Moments:
    """Enumerate every sampling outcome of ``state`` at ``w`` with dense arithmetic.

    Works from the textbook form of each estimator on ``A.to_dense()`` and is
    independent of the jitted kernel. Accepts an EstimatorState or a
    FiniteSumEstimator.
    """
    setup = state.setup
    if isinstance(state, FiniteSumEstimator):
        return _enumerate_finite_sum(state, w)
    A = state.matrix.to_dense()
    m, n = A.shape
    x0, y0 = state.w0.x, state.w0.y
    g0x, g0y = A.T @ y0, -A @ x0
    gwx, gwy = A.T @ w.y, -A @ w.x
    dx, dy = w.x - x0, w.y - y0
    variant = state.variant
    tau = state.tau
    clip = variant in CLIPPED

    if variant == "exact":
        return _moments_from([(1.0, gwx, gwy)], setup, g0x, g0y, gwx, gwy)

    # x-block outcomes: i ~ p over rows (y difference); "l1" means |dy| weighting
    py = _row_weights(variant, dy, np.sum(A ** 2, axis=1))
    x_outcomes = []
    if np.any(dy != 0) and py.sum() > 0:
        p = py / py.sum()
        for i in range(m):
            if p[i] > 0:
                x_outcomes.append((p[i], g0x + A[i] * dy[i] / p[i]))
    else:
        x_outcomes.append((1.0, g0x.copy()))

    if variant == "l2l1_oblivious":
        return _enumerate_oblivious(A, setup, x_outcomes, dx, g0x, g0y, gwx, gwy, tau, guard)

    qx = _col_weights(variant, dx, np.sum(A ** 2, axis=0))
    y_outcomes = []
    if np.any(dx != 0) and qx.sum() > 0:
        q = qx / qx.sum()
        for j in range(n):
            if q[j] > 0:
                corr = A[:, j] * dx[j] / q[j]
                if clip:
                    corr = np.clip(corr, -tau, tau)
                y_outcomes.append((q[j], g0y - corr))
    else:
        y_outcomes.append((1.0, g0y.copy()))

    if len(x_outcomes) * len(y_outcomes) > guard:
        raise OutcomeSpaceTooLarge(f"{len(x_outcomes) * len(y_outcomes)} outcomes exceed guard {guard}")
    joint = [(pa * pb, gx, gy) for pa, gx in x_outcomes for pb, gy in y_outcomes]
    return _moments_from(joint, setup, g0x, g0y, gwx, gwy)


def _moments_from(joint, setup: Setup, g0x, g0y, gwx, gwy) -> Moments:
    mean_x = np.zeros_like(g0x)
    mean_y = np.zeros_like(g0y)
    total = 0.0
    centered = deviation = x_sq = 0.0
    y_sq = np.zeros_like(g0y)
    max_sq = 0.0
    max_sup = 0.0
    sqs = []
    xs = setup.with_rho(1.0)
    for pr, gx, gy in joint:
        total += pr
        mean_x += pr * gx
        mean_y += pr * gy
        c = dual_norm_sq(xs, gx - g0x, gy - g0y)
        centered += pr * c
        deviation += pr * dual_norm_sq(xs, gx - gwx, gy - gwy)
        x_sq += pr * block_dual_norm_sq(setup.x_simplex, gx - g0x)
        y_sq += pr * (gy - g0y) ** 2
        max_sq = max(max_sq, c)
        max_sup = max(max_sup, float(np.max(np.abs(gy - g0y))) if gy.size else 0.0)
        sqs.append(c)
    return Moments(len(joint), total, mean_x, mean_y, x_sq, y_sq, max_sup,
                   centered, deviation, max_sq, sqs)


def _enumerate_oblivious(A, setup, x_outcomes, dx, g0x, g0y, gwx, gwy, tau, guard) -> Moments:
    m, n = A.shape
    # y coordinates are independent; enumerate each row's law separately
    row_laws = []
    for i in range(m):
        if not np.any(dx != 0):
            row_laws.append([(1.0, 0.0)])
            continue
        nz = np.flatnonzero(A[i])
        if len(nz) == 0:
            row_laws.append([(1.0, 0.0)])
            continue
        rsq = np.sum(A[i, nz] ** 2)
        law = []
        for j in nz:
            q = A[i, j] ** 2 / rsq
            law.append((q, float(np.clip(A[i, j] * dx[j] / q, -tau, tau))))
        row_laws.append(law)
    mean_y = np.array([g0y[i] - sum(p * v for p, v in law) for i, law in enumerate(row_laws)])
    y_sq = np.array([sum(p * v * v for p, v in law) for law in row_laws])
    max_sup = max(abs(v) for law in row_laws for _, v in law)
    mean_x = sum(p * gx for p, gx in x_outcomes)
    x_sq = sum(p * block_dual_norm_sq(setup.x_simplex, gx - g0x) for p, gx in x_outcomes)
    total_x = sum(p for p, _ in x_outcomes)
    count = len(x_outcomes)
    for law in row_laws:
        count *= len(law)
    mom = Moments(count, total_x, mean_x, mean_y, x_sq, y_sq, max_sup)
    if count <= guard:
        joint = []
        for combo in itertools.product(*row_laws):
            pr = math.prod(p for p, _ in combo)
            gy = g0y - np.array([v for _, v in combo])
            for px, gx in x_outcomes:
                joint.append((px * pr, gx, gy))
        full = _moments_from(joint, setup, g0x, g0y, gwx, gwy)
        mom.prob_total = full.prob_total
        mom.centered_sq = full.centered_sq
        mom.deviation_sq = full.deviation_sq
        mom.max_outcome_sq = full.max_outcome_sq
    return mom


def _enumerate_finite_sum(state: FiniteSumEstimator, w: Point) -> Moments:
    prob = state.problem
    p = prob.probs
    g0x, g0y = prob.full_gradient(state.w0)
    gwx, gwy = prob.full_gradient(w)
    joint = []
    for k in range(prob.K):
        a = prob.components[k](w)
        b = prob.components[k](state.w0)
        s = 1.0 / (p[k] * prob.K)
        joint.append((p[k], g0x + s * (a[0] - b[0]), g0y + s * (a[1] - b[1])))
    return _moments_from(joint, state.setup, g0x, g0y, gwx, gwy)


def distance_sq(setup: Setup, w: Point, w0: Point) -> float:
    """``|w - w0|^2`` in the unscaled setup norm."""
    return norm_sq(setup.with_rho(1.0), w.x - w0.x, w.y - w0.y)
