"""Acceptance suite: one test (or one group of sub-checks) per criterion.

Test names start with ``test_criterion_<n>``; the conftest summary hook folds
them into one PASS/FAIL line per criterion.
"""
import math
import multiprocessing as mp
import time

import numpy as np
import pytest

from blockmaxent.errors import TruncationDiverged, UnstableSystem
from blockmaxent.exact import auto_truncate, build_generator, moments, solve_params, solve_stationary
from blockmaxent.experiments import (
    DECREASING,
    INCREASING,
    compare_run,
    trend_check,
)
from blockmaxent.maxent import (
    block_polynomial,
    entropy_closed_form,
    entropy_direct,
    maxent_distribution,
    solve_y,
    solve_z,
)
from blockmaxent.model import Params, stability_check

from oracles import dense_generator, dense_stationary, entropy_sum, feasible_perturbations, quadratic_root_b2


def interior(b, n=50):
    return np.linspace(0.0, b, n + 2)[1:-1]


# 1 ---------------------------------------------------------------------------


def test_criterion_1_constraint_residuals(example_sweeps):
    points = [(r.I, r.J, r.params.b) for t in example_sweeps.values() for r in t]
    assert len(points) == 120
    t0 = time.perf_counter()
    sols = [maxent_distribution(I, J, b) for I, J, b in points]
    elapsed = time.perf_counter() - t0
    worst = max(max(s.residuals) for s in sols)
    assert worst <= 1e-9, f"worst residual {worst:.3e}"
    assert elapsed <= 1.0, f"maxent stage took {elapsed:.3f} s"


# 2 ---------------------------------------------------------------------------


@pytest.mark.parametrize("b", [2, 10, 40, 80])
def test_criterion_2_polynomial_residual(b):
    grid = interior(b)
    assert (grid > b / 2).any()
    worst = max(abs(block_polynomial(solve_y(I, b), I, b)) for I in grid)
    assert worst <= 1e-8, f"b={b}: worst residual {worst:.3e}"


# 3 ---------------------------------------------------------------------------


def test_criterion_3_spot_values():
    assert abs(solve_y(0.5, 2) - (-1 + math.sqrt(13)) / 6) <= 1e-10
    assert abs(solve_y(0.5, 2) - quadratic_root_b2(0.5)) <= 1e-10
    for b in (1, 2, 7, 80):
        assert solve_y(b / 2, b) == 1.0
    assert solve_z(0) == 0.0
    assert solve_z(1) == 0.5
    assert solve_z(9) == 0.9


# 4 ---------------------------------------------------------------------------


CASES_4 = [(0.5, 2.0, 2.0, 1, 30), (0.3, 1.0, 2.0, 2, 30), (1.2, 2.0, 3.0, 2, 25), (0.9, 5.0, 1.0, 2, 12)]


def test_criterion_4_dense_oracle():
    elapsed = 0.0
    for lam, mu1, mu2, b, jmax in CASES_4:
        t0 = time.perf_counter()
        g = build_generator(Params(lam, mu1, mu2, b), jmax)
        d = solve_stationary(g)
        elapsed += time.perf_counter() - t0
        ref = dense_stationary(dense_generator(lam, mu1, mu2, b, jmax))
        assert np.abs(d.flat() - ref).max() <= 1e-9
        assert np.abs(d.flat() @ g.matrix).max() <= 1e-10
    assert elapsed < 1.0, f"sparse solves took {elapsed:.3f} s"


# 5 ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "p",
    [Params(1.5, 2.0, 2.0, 10), Params(2.0, 3.0, 2.0, 5), Params(3.0, 1.0, 1.5, 20)],
    ids=["b10", "b5", "b20"],
)
def test_criterion_5_simulation(p):
    t0 = time.perf_counter()
    rec = compare_run(p, seeds=(0, 1, 2, 3, 4), horizon=1e6)
    elapsed = time.perf_counter() - t0
    assert rec.inside_I >= 4 and rec.inside_J >= 4, (rec.inside_I, rec.inside_J)
    assert elapsed < 60, f"{elapsed:.1f} s"


# 6 ---------------------------------------------------------------------------


def test_criterion_6_entropy_dominance():
    p = Params(0.5, 2.0, 2.0, 2)
    d = solve_params(p, jmax=50)
    m = moments(d)
    s = maxent_distribution(m.I, m.J, p.b)
    h_max = entropy_closed_form(s)
    h_exact = entropy_direct(d)
    assert h_max >= h_exact - 1e-6
    perturbed = feasible_perturbations(d.probs, 100, np.random.default_rng(2024))
    ii = np.arange(p.b + 1)[:, None]
    jj = np.arange(51)[None, :]
    for q in perturbed:
        assert abs(q.sum() - 1) <= 1e-12
        assert abs((ii * q).sum() - m.I) <= 1e-10 and abs((jj * q).sum() - m.J) <= 1e-10
        assert entropy_sum(q) <= h_max + 1e-12


# 7 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trend_reports(example_sweeps):
    return {(n, r): trend_check(t, r) for n, t in example_sweeps.items() for r in ("y", "z")}


def _desc(rep, which):
    curves = rep.curves if which == "along" else rep.across
    return "; ".join(f"{c.label:g}: {c.verdict}@{c.violation}" for c in curves if c.violation is not None)


SUBCHECKS_7 = [
    # (example, response, axis, expected verdict)
    (1, "y", "along", DECREASING),     # y vs lambda, each mu1
    (1, "y", "pointwise", DECREASING), # y vs mu1 at each lambda
    (2, "z", "along", INCREASING),     # z vs lambda, each mu1
    (2, "z", "pointwise", DECREASING), # z rises as mu1 falls
    (3, "y", "along", DECREASING),     # y vs mu1, each b
    (3, "z", "along", DECREASING),     # z vs mu1, each b
    (3, "y", "pointwise", INCREASING), # y vs b at each mu1
    (3, "z", "pointwise", INCREASING), # z vs b at each mu1
]


@pytest.mark.parametrize(
    "example, response, axis, expected", SUBCHECKS_7,
    ids=[f"ex{e}-{r}-{a}" for e, r, a, _ in SUBCHECKS_7],
)
def test_criterion_7_trends(trend_reports, example, response, axis, expected):
    # examples 1 and 2 read the same sweep
    rep = trend_reports[(1 if example == 2 else example, response)]
    got = rep.along() if axis == "along" else rep.pointwise()
    assert got == {expected}, f"{response} {axis}: {sorted(got)} ({_desc(rep, axis)})"


def test_criterion_7_sweep_runtime(example_sweeps):
    total_ms = sum(r.ms for t in example_sweeps.values() for r in t)
    assert total_ms <= 600e3


# 8 ---------------------------------------------------------------------------


def test_criterion_8_rejects_unstable():
    for p in [Params(10.0, 2.0, 2.0, 10), Params(12.0, 2.0, 2.0, 10), Params(2.0, 2.0, 2.0, 1)]:
        report = stability_check(p)
        assert not report.stable
        with pytest.raises(UnstableSystem) as info:
            solve_params(p)
        assert info.value.report == report
        with pytest.raises(UnstableSystem):
            compare_run(p, seeds=(0,), horizon=10.0)


def _truncate_worker(p, queue):
    try:
        queue.put(("ok", auto_truncate(p)))
    except TruncationDiverged as exc:
        queue.put(("diverged", str(exc)))


@pytest.mark.parametrize("lam", [9.9, 9.99])
def test_criterion_8_near_boundary_terminates(lam):
    p = Params(lam, 2.0, 2.0, 10)
    assert stability_check(p).stable
    ctx = mp.get_context("spawn")
    queue = ctx.Queue()
    proc = ctx.Process(target=_truncate_worker, args=(p, queue))
    proc.start()
    proc.join(120)
    hung = proc.is_alive()
    if hung:
        proc.kill()
        proc.join()
    assert not hung, "auto_truncate exceeded 120 s"
    outcome, _ = queue.get(timeout=5)
    assert outcome in ("ok", "diverged")


# 9 ---------------------------------------------------------------------------


@pytest.mark.parametrize("b", [2, 10, 80])
def test_criterion_9_reflection(b):
    worst = max(abs(solve_y(I, b) * solve_y(b - I, b) - 1) for I in interior(b))
    assert worst <= 1e-9, f"b={b}: {worst:.3e}"
