"""Maximum-entropy product form ``p(i, j) = x * y**i * z**j``.

Given the block mean ``I`` (over ``0..b``) and the pool mean ``J`` (over
``0..inf``) the entropy maximizer factorizes into a truncated geometric law
in ``i`` and a geometric law in ``j``.  ``y`` solves the mean equation
``m(y) = I``; ``z = J / (1 + J)``; ``x`` normalizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import entr

from .errors import DegenerateMean, InputError, InvalidMean, NegativeMean, SupportMismatch
from .exact import JointDistribution

DEFAULT_TOL = 1e-12
_BISECT_TOL = 1e-6
_MAX_NEWTON = 60

DEGENERATE_LOW = "I=0"
DEGENERATE_HIGH = "I=b"
DEGENERATE_POOL = "J=0"


def _powers(w: float, b: int) -> np.ndarray:
    # w <= 1, so w**i never overflows; underflow to 0 is harmless
    return np.power(w, np.arange(b + 1, dtype=float))


def _mean_le1(w: float, b: int) -> float:
    p = _powers(w, b)
    return float(np.arange(b + 1) @ p / p.sum())


def mean_block_given_y(y: float, b: int) -> float:
    """Mean of the truncated geometric law ``P(i) ~ y**i`` on ``0..b``."""
    if y <= 0:
        raise InputError(f"y must be positive, got {y!r}")
    if y == 1.0:
        return b / 2
    if y < 1.0:
        return _mean_le1(y, b)
    # i -> b - i maps y to 1/y
    return b - _mean_le1(1.0 / y, b)


def _mean_var_log(t: float, b: int) -> tuple[float, float]:
    """Mean and variance of ``i`` at ``y = exp(t)``; the variance is dm/dt."""
    flip = t > 0
    w = math.exp(-abs(t))
    p = _powers(w, b)
    p /= p.sum()
    i = np.arange(b + 1)
    m = float(i @ p)
    v = float(((i - m) ** 2) @ p)
    return (b - m if flip else m), v


def log_block_norm(y: float, b: int) -> float:
    """``ln S_b(y)`` with ``S_b(y) = sum_{i=0}^b y**i``, overflow-free."""
    if y == 1.0:
        return math.log(b + 1)
    if y < 1.0:
        return math.log(_powers(y, b).sum())
    return b * math.log(y) + math.log(_powers(1.0 / y, b).sum())


def block_polynomial(y: float, I: float, b: int) -> float:
    """Residual of ``y**(b+1) - sum_{n=1}^b y**n/(b-I) + I/(b-I)``.

    For ``y > 1`` the polynomial is divided by ``y**(b+1)`` (the same equation
    in ``1/y``) so that the value stays bounded.  Has the spurious root ``y = 1``.
    """
    c = 1.0 / (b - I)
    if y <= 1.0:
        p = _powers(y, b + 1)
        return float(p[b + 1] - c * p[1 : b + 1].sum() + I * c)
    w = _powers(1.0 / y, b + 1)
    return float(1.0 - c * w[1 : b + 1].sum() + I * c * w[b + 1])


def solve_y(I: float, b: int, tol: float = DEFAULT_TOL) -> float:
    return _solve_y(I, b, tol)[0]


def _solve_y(I: float, b: int, tol: float) -> tuple[float, int]:
    if not math.isfinite(I) or I < 0 or I > b:
        raise InvalidMean(f"block mean must lie in [0, {b}], got {I!r}")
    if I == 0 or I == b:
        raise DegenerateMean(I, b)
    target = tol * max(1.0, I)
    if abs(b / 2 - I) <= target:
        return 1.0, 0

    # work in t = ln y; m is strictly increasing in t
    sign = 1.0 if I > b / 2 else -1.0
    near, far = 0.0, sign
    iterations = 0
    while (_mean_var_log(far, b)[0] - I) * sign < 0:
        near, far = far, 2 * far
        iterations += 1
        if abs(far) > 1e4:
            raise InvalidMean(f"cannot bracket y for I={I!r}, b={b}")
    lo, hi = min(near, far), max(near, far)

    while hi - lo > _BISECT_TOL * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if _mean_var_log(mid, b)[0] < I:
            lo = mid
        else:
            hi = mid
        iterations += 1

    t = 0.5 * (lo + hi)
    for _ in range(_MAX_NEWTON):
        m, v = _mean_var_log(t, b)
        err = m - I
        if abs(err) <= target:
            break
        if err < 0:
            lo = t
        else:
            hi = t
        step = err / v if v > 0 else math.inf
        t_new = t - step
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        iterations += 1
        if t_new == t:
            break
        t = t_new
    return math.exp(t), iterations


def solve_z(J: float) -> float:
    if not J >= 0:
        raise NegativeMean(f"pool mean must be non-negative, got {J!r}")
    return J / (1.0 + J)


def solve_x(y: float, z: float, b: int) -> float:
    """Normalizing constant ``(1-y)(1-z)/(1-y**(b+1))``, limit ``(1-z)/(b+1)`` at ``y = 1``."""
    if y == 0.0:
        return 1.0 - z
    if y == 1.0:
        return (1.0 - z) / (b + 1)
    if y < 1.0:
        return (1.0 - z) / _powers(y, b).sum()
    return math.exp(math.log1p(-z) - log_block_norm(y, b))


@dataclass(frozen=True)
class MaxEntSolution:
    x: float
    y: float
    z: float
    I: float
    J: float
    b: int
    beta0: float
    beta1: float
    beta2: float
    log_x: float
    residuals: tuple[float, float, float]
    iterations: int
    degenerate: tuple[str, ...] = ()

    def block_logpmf(self) -> np.ndarray:
        i = np.arange(self.b + 1)
        if DEGENERATE_LOW in self.degenerate:
            return np.where(i == 0, 0.0, -np.inf)
        if DEGENERATE_HIGH in self.degenerate:
            return np.where(i == self.b, 0.0, -np.inf)
        return i * math.log(self.y) - log_block_norm(self.y, self.b)

    def pool_logpmf(self, jmax: int) -> np.ndarray:
        j = np.arange(jmax + 1)
        if self.z == 0.0:
            return np.where(j == 0, 0.0, -np.inf)
        return math.log1p(-self.z) + j * math.log(self.z)

    def log_table(self, jmax: int) -> np.ndarray:
        return self.block_logpmf()[:, None] + self.pool_logpmf(jmax)[None, :]


def _assemble(I, J, b, y, z, iterations, degenerate) -> MaxEntSolution:
    if DEGENERATE_LOW in degenerate:
        log_x = math.log1p(-z)
    elif DEGENERATE_HIGH in degenerate:
        log_x = -math.inf
    else:
        log_x = math.log1p(-z) - log_block_norm(y, b)
    beta1 = -math.log(y) if y > 0 else math.inf
    beta2 = -math.log(z) if z > 0 else math.inf
    x = 0.0 if DEGENERATE_HIGH in degenerate else solve_x(y, z, b)
    s = MaxEntSolution(
        x=x, y=y, z=z, I=I, J=J, b=b,
        beta0=-1.0 - log_x, beta1=beta1, beta2=beta2, log_x=log_x,
        residuals=(0.0, 0.0, 0.0), iterations=iterations, degenerate=degenerate,
    )
    return replace(s, residuals=constraint_residuals(s))


def maxent_distribution(I: float, J: float, b: int, tol: float = DEFAULT_TOL) -> MaxEntSolution:
    """Entropy maximizer on ``{0..b} x {0, 1, ...}`` with block mean ``I`` and pool mean ``J``.

    ``I = 0``, ``I = b`` and ``J = 0`` give point masses in the respective
    coordinate, flagged in ``degenerate``.
    """
    if isinstance(b, bool) or int(b) != b or b < 1:
        raise InputError(f"block size must be an integer >= 1, got {b!r}")
    b = int(b)
    z = solve_z(J)
    degenerate: tuple[str, ...] = ()
    try:
        y, iterations = _solve_y(I, b, tol)
    except DegenerateMean:
        iterations = 0
        if I == 0:
            y, degenerate = 0.0, (DEGENERATE_LOW,)
        else:
            y, degenerate = math.inf, (DEGENERATE_HIGH,)
    if J == 0:
        degenerate += (DEGENERATE_POOL,)
    return _assemble(float(I), float(J), b, y, z, iterations, degenerate)


def constraint_residuals(s: MaxEntSolution) -> tuple[float, float, float]:
    """``(r_norm, r_I, r_J)`` from closed-form sums (no truncation)."""
    if s.degenerate and DEGENERATE_LOW in s.degenerate:
        r_norm = abs(s.x / (1.0 - s.z) - 1.0)
        r_I = abs(s.I)
    elif s.degenerate and DEGENERATE_HIGH in s.degenerate:
        r_norm = 0.0
        r_I = abs(s.b - s.I)
    else:
        if s.y <= 1.0:
            r_norm = abs(s.x * _powers(s.y, s.b).sum() / (1.0 - s.z) - 1.0)
        else:
            # x * S_b(y) overflows for large y; compare in logs
            r_norm = abs(math.expm1(math.log(s.x) + log_block_norm(s.y, s.b) - math.log1p(-s.z)))
        r_I = abs(mean_block_given_y(s.y, s.b) - s.I)
    r_J = abs(s.z / (1.0 - s.z) - s.J)
    return r_norm, r_I, r_J


def entropy_closed_form(s: MaxEntSolution) -> float:
    """``-ln x - I ln y - J ln z``; zero-coefficient terms are dropped."""
    if DEGENERATE_HIGH in s.degenerate or DEGENERATE_LOW in s.degenerate:
        h = 0.0
    else:
        h = log_block_norm(s.y, s.b) - (s.I * math.log(s.y) if s.I else 0.0)
    if s.z > 0:
        h += -math.log1p(-s.z) - s.J * math.log(s.z)
    return max(h, 0.0)


def tabulate(s: MaxEntSolution, jmax: int) -> JointDistribution:
    """``p(i, j)`` on the truncated grid (not renormalized; the tail beyond
    ``jmax`` is ``z**(jmax+1)``)."""
    return JointDistribution(probs=np.exp(s.log_table(jmax)))


def entropy_direct(d: JointDistribution) -> float:
    """``-sum p ln p`` with ``0 ln 0 = 0``."""
    return float(entr(d.probs).sum())


def kl_divergence(exact: JointDistribution, s: MaxEntSolution) -> tuple[float, float, float]:
    """``D(exact || approx)`` over the exact table's grid.

    Returns ``(kl, exact_tail_mass, approx_tail_mass)`` where the approximate
    tail is the product-form mass beyond the grid.
    """
    if exact.b != s.b:
        raise InputError(f"block size mismatch: table b={exact.b}, solution b={s.b}")
    p = exact.probs
    logq = s.log_table(exact.jmax)
    mask = p > 0
    if np.any(np.isneginf(logq[mask])):
        raise SupportMismatch("exact distribution has mass where the approximation is zero")
    kl = float(np.sum(p[mask] * (np.log(p[mask]) - logq[mask])))
    approx_tail = s.z ** (exact.jmax + 1) if s.z > 0 else 0.0
    return kl, exact.tail_mass_estimate, float(approx_tail)
