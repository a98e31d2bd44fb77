import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from blockmaxent.errors import TruncationDiverged, TruncationTooSmall, UnstableSystem
from blockmaxent.exact import (
    JointDistribution,
    SparseGenerator,
    auto_truncate,
    build_generator,
    dump_generator,
    load_generator,
    marginals,
    moments,
    search_truncation,
    solve_params,
    solve_stationary,
)
from blockmaxent.model import Params, State, stability_check

from oracles import dense_generator, dense_stationary, product_table


def test_outgoing_b1():
    g = build_generator(Params(0.7, 2.0, 3.0, 1), jmax=2)
    assert g.outgoing(0, 1) == {State(0, 2): 0.7, State(1, 0): 2.0}


def test_boundary_arrival_suppressed():
    g = build_generator(Params(0.7, 2.0, 3.0, 2), jmax=5)
    assert g.outgoing(0, 5) == {State(2, 3): 2.0}


def test_building_and_full_block():
    g = build_generator(Params(0.7, 2.0, 3.0, 2), jmax=5)
    assert g.outgoing(2, 1) == {State(2, 2): 0.7, State(0, 1): 3.0}
    assert g.outgoing(0, 0) == {State(0, 1): 0.7}


def test_truncation_too_small():
    with pytest.raises(TruncationTooSmall):
        build_generator(Params(0.5, 1.0, 1.0, 4), jmax=3)


def test_unstable_refused_unless_exploratory():
    p = Params(5.0, 1.0, 1.0, 2)
    with pytest.raises(UnstableSystem):
        build_generator(p, 10)
    assert build_generator(p, 10, allow_unstable=True).n_states == 33


@pytest.mark.parametrize(
    "lam, mu1, mu2, b, jmax",
    [(0.5, 2, 2, 1, 5), (1.0, 3, 0.5, 3, 12), (0.0, 1, 1, 2, 4), (2.0, 1.5, 4, 5, 20)],
)
def test_generator_matches_dense_rules(lam, mu1, mu2, b, jmax):
    g = build_generator(Params(lam, mu1, mu2, b), jmax)
    np.testing.assert_array_equal(g.matrix.toarray(), dense_generator(lam, mu1, mu2, b, jmax))


def test_generator_validity_on_grid():
    for lam, mu1, mu2, b in itertools.product([0.0, 0.4, 1.3], [0.7, 5.0], [0.9, 3.0], [1, 2, 7]):
        p = Params(lam, mu1, mu2, b)
        g = build_generator(p, 3 * b + 4, allow_unstable=True)
        Q = g.matrix.toarray()
        assert np.abs(Q.sum(axis=1)).max() <= 1e-12
        off = Q - np.diag(np.diag(Q))
        assert off.min() >= 0.0
        # every target is inside the truncated space by construction
        assert all(0 <= s.j <= g.jmax and 0 <= t.j <= g.jmax for s, t, _ in g.entries())


@pytest.mark.parametrize(
    "lam, mu1, mu2, b, jmax",
    [(0.5, 2, 2, 1, 30), (0.3, 1, 2, 2, 30), (1.2, 2, 3, 2, 25), (0.7, 4, 1, 1, 10)],
)
def test_sparse_matches_dense_oracle(lam, mu1, mu2, b, jmax):
    g = build_generator(Params(lam, mu1, mu2, b), jmax)
    d = solve_stationary(g)
    ref = dense_stationary(dense_generator(lam, mu1, mu2, b, jmax))
    np.testing.assert_allclose(d.flat(), ref, atol=1e-9, rtol=0)
    assert np.abs(d.flat() @ g.matrix).max() <= 1e-10


def test_residual_b1_long_truncation():
    g = build_generator(Params(0.5, 2, 2, 1), 200)
    d = solve_stationary(g)
    assert np.abs(d.flat() @ g.matrix).max() <= 1e-10
    assert d.probs.min() >= 0
    assert abs(d.probs.sum() - 1) <= 1e-10
    ref = dense_stationary(dense_generator(0.5, 2, 2, 1, 30))
    small = solve_stationary(build_generator(Params(0.5, 2, 2, 1), 30))
    np.testing.assert_allclose(small.flat(), ref, atol=1e-9)


def test_unstable_truncated_chain_has_heavy_boundary():
    # lam = 3 > bound = 1: the truncated chain still solves but piles up at J_max
    g = build_generator(Params(3.0, 1.0, 1.0, 2), 20, allow_unstable=True)
    d = solve_stationary(g)
    assert d.tail_mass_estimate > d.tail_tol
    assert not d.converged


def test_single_state_chain():
    d = solve_stationary(SparseGenerator.from_matrix(sp.csr_matrix((1, 1))))
    np.testing.assert_array_equal(d.flat(), [1.0])


def test_raw_matrix_generator():
    Q = np.array([[-1.0, 1.0, 0.0], [0.0, -2.0, 2.0], [3.0, 0.0, -3.0]])
    d = solve_stationary(SparseGenerator.from_matrix(Q))
    np.testing.assert_allclose(d.flat(), dense_stationary(Q), atol=1e-12)


def test_zero_arrivals_point_mass():
    d = solve_stationary(build_generator(Params(0.0, 1.0, 1.0, 3), 12))
    assert d.probs[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert moments(d) == moments(d) and moments(d).I == 0 and moments(d).J == 0


def test_auto_truncate_reference_point(reference_golden):
    p = Params(**reference_golden["params"])
    assert auto_truncate(p) == reference_golden["auto_truncate_jmax"]
    r = search_truncation(p)
    (l1, I1, J1), (l2, I2, J2) = r.history[-2:]
    assert l2 == 2 * l1
    assert abs(I1 - I2) <= 1e-8 * I2 and abs(J1 - J2) <= 1e-8 * J2
    assert r.distribution.tail_mass_estimate <= 1e-10


def test_auto_truncate_zero_load():
    assert auto_truncate(Params(0.0, 1.0, 1.0, 3)) == 64
    assert auto_truncate(Params(0.0, 1.0, 1.0, 30)) == 120


def test_auto_truncate_unstable():
    with pytest.raises(TruncationDiverged):
        auto_truncate(Params(10.001, 2.0, 2.0, 10))


def test_truncation_consistency_one_more_doubling():
    p = Params(2.5, 1.0, 3.0, 4)
    level = auto_truncate(p)
    a = moments(solve_params(p, jmax=level))
    b = moments(solve_params(p, jmax=4 * level))
    assert abs(a.I - b.I) <= 1e-8 * b.I
    assert abs(a.J - b.J) <= 1e-8 * b.J


def test_solve_params_rejects_unstable():
    with pytest.raises(UnstableSystem) as info:
        solve_params(Params(2.0, 2.0, 2.0, 1))
    assert info.value.report.bound == 1.0


def test_moments_point_mass_and_uniform():
    probs = np.zeros((4, 6))
    probs[0, 0] = 1
    m = moments(JointDistribution(probs))
    assert (m.I, m.J) == (0.0, 0.0)
    probs = np.zeros((5, 3))
    probs[:, 0] = 0.2
    m = moments(JointDistribution(probs))
    assert m.I == pytest.approx(2.0) and m.J == 0.0


def test_moments_product_form():
    table = product_table(0.5, 0.5, 1, 80)
    m = moments(JointDistribution(table))
    assert m.I == pytest.approx(1 / 3, abs=1e-15)
    assert m.J == pytest.approx(1.0, abs=1e-20 + 1e-12)


def test_marginals():
    probs = np.zeros((3, 4))
    probs[0, 0] = 1
    block, pool = marginals(JointDistribution(probs))
    np.testing.assert_array_equal(block, [1, 0, 0])
    np.testing.assert_array_equal(pool, [1, 0, 0, 0])

    table = product_table(0.5, 0.25, 3, 40)
    block, _ = marginals(JointDistribution(table))
    np.testing.assert_allclose(block / block[0], 0.5 ** np.arange(4), rtol=1e-13)

    d = solve_params(Params(1.0, 1.5, 2.0, 5))
    block, pool = marginals(d)
    assert block.sum() == pytest.approx(1, abs=1e-10) and pool.sum() == pytest.approx(1, abs=1e-10)
    assert np.arange(6) @ block == pytest.approx(moments(d).I, abs=1e-14)


def test_moment_ranges_on_grid():
    for lam, mu1, b in itertools.product([0.3, 1.1], [0.8, 3.0], [1, 3, 8]):
        p = Params(lam, mu1, 1.5, b)
        if not stability_check(p).stable:
            continue
        d = solve_params(p, jmax=max(4 * b, 64))
        m = moments(d)
        assert 0 <= m.I <= b and m.J >= 0


def test_flow_balance_block_mean():
    # transactions leave only at block completion: lam = mu2 * I
    for p in [Params(1.5, 2, 2, 10), Params(0.4, 5, 0.7, 3), Params(3.0, 1.0, 1.0, 9)]:
        assert moments(solve_params(p)).I == pytest.approx(p.lam / p.mu2, rel=1e-10)


def test_generator_dump_roundtrip(tmp_path):
    g = build_generator(Params(0.5, 1.0, 2.0, 2), 6)
    path = tmp_path / "q.txt"
    dump_generator(g, path)
    lines = path.read_text().splitlines()
    assert "0:1 0:2 0.5" in lines
    assert "0:1 1:0 1.0" in lines
    Q = load_generator(path, b=2)
    np.testing.assert_array_equal(Q.toarray(), g.matrix.toarray())
