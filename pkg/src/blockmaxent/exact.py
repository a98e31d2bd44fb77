"""Level-truncated generator of the two-stage queue and its stationary solution.

States ``(i, j)`` are enumerated row-major by pool level, ``index = j*(b+1) + i``.
``i = 0`` means the system is mining (block-generation stage); ``i >= 1``
means a block holding ``i`` transactions is being pegged to the chain.

Transitions of the truncated chain:

* arrival ``(i, j) -> (i, j+1)`` at rate ``lam`` for ``j < J_max``;
* block generation ``(0, j) -> (k, j-k)`` with ``k = min(j, b)`` at rate ``mu1``
  for ``j >= 1``;
* blockchain building ``(i, j) -> (0, j)`` at rate ``mu2`` for ``i >= 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    SolveDidNotConverge,
    TruncationDiverged,
    TruncationTooSmall,
    UnstableSystem,
)
from .model import Params, State, stability_check, validate_params

log = logging.getLogger(__name__)

DEFAULT_RESIDUAL_TOL = 1e-10
DEFAULT_TAIL_EPS = 1e-10
DEFAULT_MOMENT_RTOL = 1e-8
# Schur complement on the mining states is dense upper-Hessenberg: memory ~ J_max**2.
DEFAULT_MAX_JMAX = 8192


@dataclass(frozen=True)
class SparseGenerator:
    """Infinitesimal generator ``Q`` (CSR, diagonal included).

    ``params`` and ``jmax`` are ``None`` for generators built from a raw matrix.
    """

    matrix: sp.csr_matrix
    params: Params | None = None
    jmax: int | None = None

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def b(self) -> int | None:
        return None if self.params is None else self.params.b

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    @classmethod
    def from_matrix(cls, Q) -> "SparseGenerator":
        Q = sp.csr_matrix(Q, dtype=float)
        if Q.shape[0] != Q.shape[1]:
            raise ValueError("generator must be square")
        return cls(matrix=Q)

    def index(self, i: int, j: int) -> int:
        return j * (self.b + 1) + i

    def state(self, k: int) -> State:
        i, j = k % (self.b + 1), k // (self.b + 1)
        return State(int(i), int(j))

    def entries(self) -> Iterator[tuple[State, State, float]]:
        """Off-diagonal entries as ``(from, to, rate)``."""
        coo = self.matrix.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            if r != c and v != 0.0:
                yield self.state(r), self.state(c), float(v)

    def outgoing(self, i: int, j: int) -> dict[State, float]:
        k = self.index(i, j)
        row = self.matrix.getrow(k)
        return {
            self.state(c): float(v)
            for c, v in zip(row.indices, row.data)
            if c != k and v != 0.0
        }


def build_generator(p: Params, jmax: int, allow_unstable: bool = False) -> SparseGenerator:
    """Assemble ``Q`` for pool truncation level ``jmax``.

    Unstable parameters are refused unless ``allow_unstable`` is set
    (exploratory runs; the truncated chain is always positive recurrent).
    """
    validate_params(p)
    report = stability_check(p)
    if not report.stable and not allow_unstable:
        raise UnstableSystem(report)
    b = p.b
    if jmax < b:
        raise TruncationTooSmall(f"J_max={jmax} must be >= b={b}")

    w = b + 1
    n = w * (jmax + 1)
    k = np.arange(n)
    ii = k % w
    jj = k // w

    rows, cols, vals = [], [], []

    if p.lam > 0:
        m = jj < jmax
        rows.append(k[m])
        cols.append(k[m] + w)
        vals.append(np.full(m.sum(), float(p.lam)))

    m = (ii == 0) & (jj >= 1)
    taken = np.minimum(jj[m], b)
    rows.append(k[m])
    cols.append((jj[m] - taken) * w + taken)
    vals.append(np.full(m.sum(), float(p.mu1)))

    m = ii >= 1
    rows.append(k[m])
    cols.append(jj[m] * w)
    vals.append(np.full(m.sum(), float(p.mu2)))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    out = np.bincount(rows, weights=vals, minlength=n)
    rows = np.concatenate([rows, k])
    cols = np.concatenate([cols, k])
    vals = np.concatenate([vals, -out])
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SparseGenerator(matrix=Q, params=p, jmax=jmax)


@dataclass(frozen=True)
class JointDistribution:
    """Truncated table ``probs[i, j]`` for ``0 <= i <= b``, ``0 <= j <= jmax``."""

    probs: np.ndarray
    tail_tol: float = DEFAULT_TAIL_EPS
    residual: float = 0.0

    @property
    def b(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def jmax(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def tail_mass_estimate(self) -> float:
        """Probability of the truncation boundary ``j = jmax``."""
        return float(self.probs[:, -1].sum())

    @property
    def converged(self) -> bool:
        return self.tail_mass_estimate <= self.tail_tol

    def flat(self) -> np.ndarray:
        """Probabilities in generator state order."""
        return self.probs.T.ravel()


@dataclass(frozen=True)
class Moments:
    I: float
    J: float


def _structured_order(b: int, jmax: int, anchor: int) -> np.ndarray:
    """Elimination order: building states (by i, then j), mining states, anchor last.

    Among building states the transposed generator is lower triangular, so
    LU without pivoting creates no fill there; all fill lands in the Schur
    complement on the ``jmax + 1`` mining states.
    """
    w = b + 1
    building = np.array(
        [j * w + i for i in range(1, w) for j in range(jmax + 1)], dtype=np.int64
    )
    mining = np.arange(jmax + 1, dtype=np.int64) * w
    mining = mining[mining != anchor]
    return np.concatenate([building, mining, [anchor]])


def solve_stationary(
    g: SparseGenerator,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
    tail_tol: float = DEFAULT_TAIL_EPS,
) -> JointDistribution:
    """Stationary vector of ``g`` via sparse LU of ``Q^T`` with one balance
    equation replaced by normalization.

    The result satisfies ``max|pi Q| <= residual_tol``, ``pi >= 0`` and
    ``sum(pi) = 1``.
    """
    Q = g.matrix
    n = g.n_states
    if n == 1:
        pi = np.ones(1)
        return _wrap(g, pi, 0.0, tail_tol)

    anchor = 0  # state (0, 0): balance equation replaced by normalization
    structured = g.params is not None
    if structured:
        order = _structured_order(g.b, g.jmax, anchor)
    else:
        order = np.concatenate([np.arange(1, n), [anchor]])

    A = Q.T.tocsr()[order][:, order].tocoo()
    keep = A.row != n - 1
    rows = np.concatenate([A.row[keep], np.full(n, n - 1)])
    cols = np.concatenate([A.col[keep], np.arange(n)])
    vals = np.concatenate([A.data[keep], np.ones(n)])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    rhs = np.zeros(n)
    rhs[-1] = 1.0

    try:
        if structured:
            lu = spla.splu(
                A,
                permc_spec="NATURAL",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        else:
            lu = spla.splu(A)
    except RuntimeError as exc:  # singular factor
        raise SolveDidNotConverge(f"factorization failed: {exc}") from exc

    x = lu.solve(rhs)
    residual = np.inf
    for _ in range(3):  # iterative refinement with the same factors
        pi = np.empty(n)
        pi[order] = x
        residual = float(np.abs(Q.T @ pi).max())
        if residual <= residual_tol and abs(pi.sum() - 1.0) <= residual_tol:
            break
        x = x + lu.solve(rhs - A @ x)
    if not np.all(np.isfinite(pi)):
        raise SolveDidNotConverge("non-finite stationary vector", residual)
    if residual > residual_tol:
        raise SolveDidNotConverge("balance residual above tolerance", residual)
    if pi.min() < -residual_tol:
        raise SolveDidNotConverge("negative stationary probability", float(-pi.min()))

    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return _wrap(g, pi, residual, tail_tol)


def _wrap(g: SparseGenerator, pi: np.ndarray, residual: float, tail_tol: float):
    if g.params is None:
        # raw generator: expose as a single-row table (b = n - 1, jmax = 0)
        probs = pi.reshape(-1, 1)
    else:
        probs = pi.reshape(g.jmax + 1, g.b + 1).T.copy()
    return JointDistribution(probs=probs, tail_tol=tail_tol, residual=residual)


def moments(d: JointDistribution) -> Moments:
    block, pool = marginals(d)
    I = float(np.arange(block.size) @ block)
    J = float(np.arange(pool.size) @ pool)
    return Moments(I=min(max(I, 0.0), float(d.b)), J=max(J, 0.0))


def marginals(d: JointDistribution) -> tuple[np.ndarray, np.ndarray]:
    return d.probs.sum(axis=1), d.probs.sum(axis=0)


@dataclass
class TruncationResult:
    jmax: int
    distribution: JointDistribution
    history: list[tuple[int, float, float]] = field(default_factory=list)


def _close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def search_truncation(
    p: Params,
    tail_eps: float = DEFAULT_TAIL_EPS,
    moment_rtol: float = DEFAULT_MOMENT_RTOL,
    max_jmax: int = DEFAULT_MAX_JMAX,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
) -> TruncationResult:
    """Doubling search behind :func:`auto_truncate`; also returns the accepted table."""
    report = stability_check(p)
    if not report.stable:
        raise TruncationDiverged(
            f"unstable parameters: lambda={p.lam:g} >= bound={report.bound:g}"
        )
    level = max(4 * p.b, 64)
    history: list[tuple[int, float, float]] = []
    prev: tuple[int, JointDistribution, Moments] | None = None
    while level <= max_jmax:
        d = solve_stationary(build_generator(p, level), residual_tol, tail_eps)
        m = moments(d)
        history.append((level, m.I, m.J))
        log.debug("J_max=%d I=%.15g J=%.15g tail=%.3e", level, m.I, m.J, d.tail_mass_estimate)
        if prev is not None:
            plevel, pd, pm = prev
            if (
                pd.tail_mass_estimate <= tail_eps
                and _close(pm.I, m.I, moment_rtol)
                and _close(pm.J, m.J, moment_rtol)
            ):
                return TruncationResult(plevel, pd, history)
        prev = (level, d, m)
        level *= 2
    raise TruncationDiverged(
        f"no truncation level <= {max_jmax} met tail_eps={tail_eps:g}",
        iterates=history[-2:],
    )


def auto_truncate(
    p: Params,
    tail_eps: float = DEFAULT_TAIL_EPS,
    moment_rtol: float = DEFAULT_MOMENT_RTOL,
    max_jmax: int = DEFAULT_MAX_JMAX,
) -> int:
    """Smallest doubling level (from ``max(4b, 64)``) with negligible boundary
    mass and moments stable under one further doubling."""
    return search_truncation(p, tail_eps, moment_rtol, max_jmax).jmax


def solve_params(
    p: Params,
    jmax: int | None = None,
    tail_eps: float = DEFAULT_TAIL_EPS,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
) -> JointDistribution:
    """Exact stationary table for a stable system, auto-truncated unless ``jmax`` is given."""
    report = stability_check(p)
    if not report.stable:
        raise UnstableSystem(report)
    if jmax is None:
        return search_truncation(p, tail_eps, residual_tol=residual_tol).distribution
    return solve_stationary(build_generator(p, jmax), residual_tol, tail_eps)


def dump_generator(g: SparseGenerator, path) -> None:
    """Write nonzero entries as ``row col rate`` lines, states as ``i:j``."""
    coo = g.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with Path(path).open("w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{g.state(r).label()} {g.state(c).label()} {float(v)!r}\n")


def load_generator(path, b: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    w = b + 1
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        src, dst, rate = line.split()
        i, j = map(int, src.split(":"))
        k, l = map(int, dst.split(":"))
        rows.append(j * w + i)
        cols.append(l * w + k)
        vals.append(float(rate))
    n = max(max(rows), max(cols)) + 1
    n = -(-n // w) * w
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
