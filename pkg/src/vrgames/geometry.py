"""Domain setups: norms, distance generating functions, Bregman divergences and
the closed-form mirror step.

Three product domains are supported:

* ``l1l1``: simplex x simplex, entropy on both blocks, l1 norm
* ``l2l1``: unit ball x simplex, half squared norm on x, entropy on y
* ``l2l2``: unit ball x unit ball, half squared norm on both blocks

Block rescaling by ``rho`` uses ``rho * V^x + V^y / rho`` as the divergence;
the matching primal norm squared is ``rho |x|^2 + |y|^2 / rho`` and the dual is
``|g^x|_*^2 / rho + rho |g^y|_*^2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

LOG_FLOOR = -700.0
FEAS_TOL = 1e-9


class InfeasiblePointError(ValueError):
    pass


class SetupKind(str, enum.Enum):
    L1L1 = "l1l1"
    L2L1 = "l2l1"
    L2L2 = "l2l2"


@dataclass(frozen=True)
class Setup:
    kind: SetupKind
    n: int
    m: int
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SetupKind(self.kind))
        if self.n < 1 or self.m < 1:
            raise ValueError(f"setup dimensions must be positive, got n={self.n}, m={self.m}")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be positive and finite, got {self.rho}")

    @property
    def x_simplex(self) -> bool:
        return self.kind == SetupKind.L1L1

    @property
    def y_simplex(self) -> bool:
        return self.kind != SetupKind.L2L2

    def with_rho(self, rho: float) -> "Setup":
        return Setup(self.kind, self.n, self.m, rho)


@dataclass
class Point:
    """Primal-dual pair ``z = (x, y)``; ``kind`` tags the setup it lives in."""
    x: np.ndarray
    y: np.ndarray
    kind: SetupKind

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.kind = SetupKind(self.kind)

    def copy(self) -> "Point":
        return Point(self.x.copy(), self.y.copy(), self.kind)

    def __sub__(self, other: "Point") -> tuple[np.ndarray, np.ndarray]:
        return self.x - other.x, self.y - other.y


@dataclass(frozen=True)
class CompositeTerm:
    """``lambda_x * r^x(x) + lambda_y * r^y(y)`` added to the objective."""
    lambda_x: float = 0.0
    lambda_y: float = 0.0

    def __post_init__(self):
        for name in ("lambda_x", "lambda_y"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    @property
    def is_zero(self) -> bool:
        return self.lambda_x == 0 and self.lambda_y == 0


Weight = Union[float, tuple[float, float]]


def theta(setup: Setup) -> float:
    """Range of the distance generating function over the domain."""
    if setup.kind == SetupKind.L1L1:
        return math.log(setup.n * setup.m)
    if setup.kind == SetupKind.L2L1:
        return 0.5 + math.log(setup.m)
    return 1.0


def uniform_center(setup: Setup) -> Point:
    """Minimizer of r: uniform on simplex blocks, origin on ball blocks."""
    x = np.full(setup.n, 1.0 / setup.n) if setup.x_simplex else np.zeros(setup.n)
    y = np.full(setup.m, 1.0 / setup.m) if setup.y_simplex else np.zeros(setup.m)
    return Point(x, y, setup.kind)


def safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(p), LOG_FLOOR)


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def project_ball(v: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v)
    return v / nv if nv > 1.0 else v


def kl(y: np.ndarray, yp: np.ndarray) -> float:
    """``sum yp log(yp/y) + y - yp``; +inf when yp charges a zero of y."""
    if np.any((y <= 0) & (yp > 0)):
        return math.inf
    pos = yp > 0
    val = np.sum(yp[pos] * (np.log(yp[pos]) - np.log(y[pos]))) + np.sum(y) - np.sum(yp)
    return float(max(val, 0.0))


def block_divergence(simplex: bool, a: np.ndarray, b: np.ndarray) -> float:
    if simplex:
        return kl(a, b)
    d = b - a
    return 0.5 * float(d @ d)


def bregman(setup: Setup, z: Point, zp: Point) -> float:
    """``V_z(z')`` with block weights ``rho`` and ``1/rho``."""
    vx = block_divergence(setup.x_simplex, z.x, zp.x)
    vy = block_divergence(setup.y_simplex, z.y, zp.y)
    return setup.rho * vx + vy / setup.rho


def _block_norm_sq(simplex: bool, v: np.ndarray) -> float:
    return float(np.abs(v).sum() ** 2) if simplex else float(v @ v)


def block_dual_norm_sq(simplex: bool, g: np.ndarray) -> float:
    if simplex:
        return float(np.abs(g).max() ** 2) if g.size else 0.0
    return float(g @ g)


def norm_sq(setup: Setup, dx: np.ndarray, dy: np.ndarray) -> float:
    """Squared (rescaled) primal norm of a displacement."""
    return (setup.rho * _block_norm_sq(setup.x_simplex, np.asarray(dx))
            + _block_norm_sq(setup.y_simplex, np.asarray(dy)) / setup.rho)


def dual_norm_sq(setup: Setup, gx: np.ndarray, gy: np.ndarray) -> float:
    """Squared (rescaled) dual norm of a gradient-like pair."""
    return (block_dual_norm_sq(setup.x_simplex, np.asarray(gx)) / setup.rho
            + setup.rho * block_dual_norm_sq(setup.y_simplex, np.asarray(gy)))


def grad_r(setup: Setup, z: Point) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the (unscaled) distance generating function per block."""
    gx = 1.0 + safe_log(z.x) if setup.x_simplex else z.x.copy()
    gy = 1.0 + safe_log(z.y) if setup.y_simplex else z.y.copy()
    return gx, gy


def _split(w: Weight) -> tuple[float, float]:
    if isinstance(w, tuple):
        return float(w[0]), float(w[1])
    return float(w), float(w)


def _block_step(simplex: bool, gamma: np.ndarray, centers: list[np.ndarray], weights: list[float]):
    total = sum(weights)
    if simplex:
        acc = -gamma.astype(np.float64)
        for c, w in zip(centers, weights):
            if w:
                acc = acc + w * safe_log(c)
        return softmax(acc / total)
    acc = -gamma.astype(np.float64)
    for c, w in zip(centers, weights):
        if w:
            acc = acc + w * c
    return project_ball(acc / total)


def mirror_step(setup: Setup, gamma: tuple[np.ndarray, np.ndarray],
                anchors: Sequence[tuple[Point, Weight]]) -> Point:
    """``argmin_z <gamma, z> + sum_i w_i V_{z_i}(z)`` over the domain.

    A weight may be a scalar or an ``(x_weight, y_weight)`` pair. Rescaling by
    ``setup.rho`` multiplies x weights by rho and divides y weights by rho.
    """
    if not anchors:
        raise ValueError("mirror_step needs at least one anchor")
    gx, gy = (np.asarray(g, dtype=np.float64) for g in gamma)
    if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
        raise ValueError("mirror_step: non-finite gradient")
    wx, wy = zip(*(_split(w) for _, w in anchors))
    wx = [w * setup.rho for w in wx]
    wy = [w / setup.rho for w in wy]
    if sum(wx) <= 0 or sum(wy) <= 0 or min(wx) < 0 or min(wy) < 0:
        raise ValueError("mirror_step: anchor weights must be nonnegative with positive total per block")
    x = _block_step(setup.x_simplex, gx, [p.x for p, _ in anchors], wx)
    y = _block_step(setup.y_simplex, gy, [p.y for p, _ in anchors], wy)
    return Point(x, y, setup.kind)


def composite_fold(term: CompositeTerm, setup: Setup) -> list[tuple[Point, tuple[float, float]]]:
    """Express ``lambda * r`` as an anchor at the r-minimizer.

    On the ball ``r(x) = V_0(x)``; on the simplex ``r(y) = KL(uniform || y) - log m``,
    and the constant is irrelevant to the argmin. Weights are pre-divided so that
    mirror_step's rho scaling yields exactly ``lambda_x`` and ``lambda_y``.
    """
    if term.is_zero:
        return []
    return [(uniform_center(setup), (term.lambda_x / setup.rho, term.lambda_y * setup.rho))]


def composite_value(term: CompositeTerm, setup: Setup, z: Point) -> float:
    """``lambda_x r^x(x) + lambda_y r^y(y)`` with r = negative entropy or half squared norm."""
    def r(simplex, v):
        if simplex:
            pos = v > 0
            return float(np.sum(v[pos] * np.log(v[pos])))
        return 0.5 * float(v @ v)
    return term.lambda_x * r(setup.x_simplex, z.x) + term.lambda_y * r(setup.y_simplex, z.y)


def check_feasible(setup: Setup, z: Point, tol: float = FEAS_TOL) -> None:
    """Raise InfeasiblePointError naming the violated domain constraint."""
    for name, v, dim, simplex in (("x", z.x, setup.n, setup.x_simplex),
                                  ("y", z.y, setup.m, setup.y_simplex)):
        if v.shape != (dim,):
            raise InfeasiblePointError(f"{name} has shape {v.shape}, expected ({dim},)")
        if not np.all(np.isfinite(v)):
            raise InfeasiblePointError(f"{name} has non-finite entries")
        if simplex:
            if v.min() < -tol:
                raise InfeasiblePointError(f"{name} has a negative entry {v.min():.3g} (simplex requires x >= 0)")
            s = v.sum()
            if abs(s - 1.0) > tol:
                raise InfeasiblePointError(f"{name} sums to {s:.12g}, simplex requires sum 1")
        else:
            nv = np.linalg.norm(v)
            if nv > 1.0 + tol:
                raise InfeasiblePointError(f"{name} has norm {nv:.12g}, ball requires norm <= 1")


def is_feasible(setup: Setup, z: Point, tol: float = FEAS_TOL) -> bool:
    try:
        check_feasible(setup, z, tol)
    except InfeasiblePointError:
        return False
    return True
