"""System parameters, state space and the stability condition."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidBlockSize, NegativeArrival, NonPositiveRate


@dataclass(frozen=True)
class Params:
    """Two-stage blockchain queue.

    ``lam`` is the Poisson arrival rate of transactions, ``mu1`` the
    block-generation (mining) rate, ``mu2`` the blockchain-building rate and
    ``b`` the maximum number of transactions per block.
    """

    lam: float
    mu1: float
    mu2: float
    b: int

    def replace(self, **changes) -> "Params":
        fields = {"lam": self.lam, "mu1": self.mu1, "mu2": self.mu2, "b": self.b}
        fields.update(changes)
        return Params(**fields)


@dataclass(frozen=True)
class State:
    i: int  # transactions in the block
    j: int  # transactions in the pool

    def __post_init__(self):
        if self.i < 0 or self.j < 0:
            raise ValueError(f"state ({self.i}, {self.j}) outside the state space")

    def label(self) -> str:
        return f"{self.i}:{self.j}"


@dataclass(frozen=True)
class StabilityReport:
    bound: float
    lam: float
    stable: bool
    margin: float


def validate_params(p: Params) -> Params:
    for name in ("lam", "mu1", "mu2"):
        v = getattr(p, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise NonPositiveRate(f"{name} must be a finite number, got {v!r}")
    if p.mu1 <= 0 or p.mu2 <= 0:
        raise NonPositiveRate(f"service rates must be positive (mu1={p.mu1}, mu2={p.mu2})")
    if p.lam < 0:
        raise NegativeArrival(f"arrival rate must be non-negative, got {p.lam}")
    if isinstance(p.b, bool) or not isinstance(p.b, int) or p.b < 1:
        raise InvalidBlockSize(f"block size must be an integer >= 1, got {p.b!r}")
    return p


def in_state_space(s: State, b: int) -> bool:
    return 0 <= s.i <= b and s.j >= 0


def throughput_bound(b: int, mu1: float, mu2: float) -> float:
    """Transactions per unit time carried by back-to-back full blocks."""
    return b * mu1 * mu2 / (mu1 + mu2)


def stability_check(p: Params) -> StabilityReport:
    validate_params(p)
    bound = throughput_bound(p.b, p.mu1, p.mu2)
    margin = bound - p.lam
    # lam == bound is null-recurrent: no stationary distribution
    return StabilityReport(bound=bound, lam=p.lam, stable=margin > 0, margin=margin)
