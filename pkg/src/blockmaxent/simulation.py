"""Discrete-event simulation of the two-stage queue (no truncation).

Random-number contract: ``SeedSequence(seed).spawn(3)`` gives three
independent PCG64 streams, used for inter-arrival, block-generation and
blockchain-building times respectively.  Each stream draws standard
exponentials in blocks of ``_CHUNK`` and scales them by ``1/rate``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateRun, InvalidSimConfig, TooFewBatches
from .model import Params, stability_check, validate_params

_CHUNK = 1 << 14

Sampler = Callable[[], float]


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 1e5
    warmup: float | None = None  # None: 10% of horizon
    n_batches: int = 20
    seed: int = 0

    @property
    def warmup_time(self) -> float:
        return 0.1 * self.horizon if self.warmup is None else self.warmup

    def validate(self) -> "SimConfig":
        if not self.horizon > 0:
            raise InvalidSimConfig(f"horizon must be positive, got {self.horizon}")
        if not 0 <= self.warmup_time < self.horizon:
            raise InvalidSimConfig("warmup must lie in [0, horizon)")
        if self.n_batches < 10:
            raise InvalidSimConfig(f"need at least 10 batches, got {self.n_batches}")
        return self


@dataclass(frozen=True)
class SimEstimate:
    I_hat: float
    J_hat: float
    I_se: float
    J_se: float
    n_events: int
    config: SimConfig
    stable: bool


class ExponentialStream:
    """Buffered exponential variates with the given rate."""

    def __init__(self, rng: np.random.Generator, rate: float):
        self._rng = rng
        self._scale = 1.0 / rate
        self._buf: list[float] = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos == len(self._buf):
            self._buf = (self._rng.standard_exponential(_CHUNK) * self._scale).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


def make_streams(seed: int, p: Params) -> tuple[Sampler | None, Sampler, Sampler]:
    arr, mine, build = (
        np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(3)
    )
    arrivals = ExponentialStream(arr, p.lam) if p.lam > 0 else None
    return arrivals, ExponentialStream(mine, p.mu1), ExponentialStream(build, p.mu2)


def batch_means(series) -> tuple[float, float]:
    """Sample mean and standard error of per-batch averages."""
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        raise TooFewBatches(f"need at least 10 batches, got {x.size}")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def simulate(
    p: Params,
    c: SimConfig,
    arrival: Sampler | None = None,
    mining: Sampler | None = None,
    building: Sampler | None = None,
) -> SimEstimate:
    """Time-average block and pool occupancy over ``[warmup, horizon]``.

    The samplers default to the exponential streams of :func:`make_streams`;
    passing other callables gives non-exponential variants.
    """
    validate_params(p)
    c.validate()
    stable = stability_check(p).stable
    default_arr, default_mine, default_build = make_streams(c.seed, p)
    arrival = arrival if arrival is not None else default_arr
    mining = mining or default_mine
    building = building or default_build

    b = p.b
    horizon = c.horizon
    warmup = c.warmup_time
    nb = c.n_batches
    width = (horizon - warmup) / nb
    area_i = [0.0] * nb
    area_j = [0.0] * nb

    inf = math.inf
    t = 0.0
    i = 0
    j = 0
    is_mining = False
    next_arr = arrival() if arrival is not None else inf
    next_srv = inf
    n_events = 0
    batch = -1  # -1: still in warmup
    batch_end = warmup

    while True:
        t_next = next_arr if next_arr < next_srv else next_srv
        t_stop = t_next if t_next < horizon else horizon
        # occupancy is constant on [t, t_stop); split it across batch edges
        while t_stop > batch_end:
            if batch >= 0:
                area_i[batch] += i * (batch_end - t)
                area_j[batch] += j * (batch_end - t)
            t = batch_end
            batch += 1
            batch_end = horizon if batch == nb - 1 else warmup + (batch + 1) * width
        if batch >= 0:
            area_i[batch] += i * (t_stop - t)
            area_j[batch] += j * (t_stop - t)
        if t_next >= horizon:
            break
        if batch >= 0:
            n_events += 1
        t = t_next

        if next_arr <= next_srv:
            j += 1
            next_arr = t + arrival()
            if i == 0 and not is_mining:
                is_mining = True
                next_srv = t + mining()
        elif is_mining:
            k = j if j < b else b
            i = k
            j -= k
            is_mining = False
            next_srv = t + building()
        else:
            i = 0
            if j > 0:
                is_mining = True
                next_srv = t + mining()
            else:
                next_srv = inf

    if n_events == 0 and p.lam > 0:
        raise DegenerateRun("no events after warmup; increase the horizon")
    I_hat, I_se = batch_means([a / width for a in area_i])
    J_hat, J_se = batch_means([a / width for a in area_j])
    return SimEstimate(I_hat, J_hat, I_se, J_se, n_events, c, stable)
