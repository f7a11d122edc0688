"""Simplex core against brute-force vertex enumeration and textbook cases."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superhedge import lp as L
from _instances import lp_oracle, random_small_lp


def beale():
    # classic example on which Dantzig's rule with lowest-index ties cycles
    c = [-0.75, 150.0, -0.02, 6.0]
    rows = [
        ([0.25, -60.0, -0.04, 9.0], "le", 0.0),
        ([0.5, -90.0, -0.02, 3.0], "le", 0.0),
        ([0.0, 0.0, 1.0, 0.0], "le", 1.0),
    ]
    return L.from_rows(c, rows)


@pytest.mark.parametrize("pricing", ["steepest", "dantzig"])
@pytest.mark.parametrize("bland_after", [None, 0, 1])
def test_beale_degenerate_cycle(pricing, bland_after):
    sol = L.solve(beale(), pricing=pricing, bland_after=bland_after)
    assert sol.status == L.OPTIMAL
    assert sol.objective == pytest.approx(-0.05, abs=1e-12)
    assert L.check_certificate(beale(), sol).ok()


def test_bland_fallback_is_counted():
    sol = L.solve(beale(), pricing="dantzig", bland_after=0)
    assert sol.bland_pivots > 0


def test_small_known_optimum():
    # max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3
    lp = L.from_rows([3, 2], [([1, 1], "le", 4), ([1, 3], "le", 6)], sense="max", upper=[3, np.inf])
    sol = L.solve(lp)
    assert sol.optimal
    np.testing.assert_allclose(sol.x, [3, 1], atol=1e-12)
    assert sol.objective == pytest.approx(11.0)
    rep = L.check_certificate(lp, sol)
    assert rep.ok()
    assert rep.dual_objective == pytest.approx(11.0)


def test_infeasible_and_unbounded():
    lp = L.from_rows([1, 1], [([1, 1], "le", 1), ([1, 1], "ge", 2)])
    assert L.solve(lp).status == L.INFEASIBLE
    lp = L.from_rows([-1, 0], [([1, -1], "le", 1)])
    assert L.solve(lp).status == L.UNBOUNDED


def test_free_variables_and_equalities():
    # min |shifted| form: min x1 - x2 with x free, x1 + x2 = 2, x1 - x2 >= -4
    lp = L.from_rows([1, -1], [([1, 1], "eq", 2), ([1, -1], "ge", -4)], lower=[-np.inf, -np.inf])
    sol = L.solve(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(-4.0)
    assert L.check_certificate(lp, sol).ok()


def test_redundant_equalities():
    # third row is the sum of the first two
    A = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 1, 1, 1.0]])
    lp = L.LinearProgram(c=[1, 2, 3, 1], A=A, b=[0.5, 0.5, 1.0], row_kinds=("eq",) * 3)
    sol = L.solve(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(1.0)
    assert L.check_certificate(lp, sol).ok()


def test_iteration_limit():
    sol = L.solve(beale(), max_iters=1)
    assert sol.status == L.ITERATION_LIMIT
    assert np.isnan(sol.objective)


def test_invalid_programs_rejected():
    with pytest.raises(ValueError):
        L.LinearProgram(c=[1], A=[[1, 2]], b=[1], row_kinds=("le",))
    with pytest.raises(ValueError):
        L.LinearProgram(c=[1], A=[[1]], b=[1], row_kinds=("lt",))
    with pytest.raises(ValueError):
        L.LinearProgram(c=[1], A=[[1]], b=[1], row_kinds=("le",), lower=[2], upper=[1])
    with pytest.raises(ValueError):
        L.solve(beale(), pricing="random")


@pytest.mark.parametrize("seed", range(60))
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    lp = random_small_lp(rng)
    best, _ = lp_oracle(lp)
    sol = L.solve(lp)
    if best is None:
        assert sol.status == L.INFEASIBLE
    else:
        assert sol.status == L.OPTIMAL
        assert sol.objective == pytest.approx(best, abs=1e-8)
        assert L.check_certificate(lp, sol).ok()


@pytest.mark.parametrize("lam", [2.0, 10.0])
@pytest.mark.parametrize("seed", range(10))
def test_objective_scale_covariance(lam, seed):
    rng = np.random.default_rng(seed)
    lp = random_small_lp(rng)
    scaled = L.LinearProgram(lp.c * lam, lp.A, lp.b, lp.row_kinds, lp.lower, lp.upper, lp.sense)
    a, b = L.solve(lp), L.solve(scaled)
    assert a.status == b.status
    if a.optimal:
        assert b.objective == pytest.approx(lam * a.objective, abs=1e-9 * lam)
        np.testing.assert_allclose(b.y, lam * a.y, atol=1e-8 * lam)


@pytest.mark.parametrize("seed", range(10))
def test_pricing_rules_agree(seed):
    lp = random_small_lp(np.random.default_rng(50 + seed))
    a, b = L.solve(lp, pricing="steepest"), L.solve(lp, pricing="dantzig")
    assert a.status == b.status
    if a.optimal:
        assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_dual_sign_convention():
    # min x, x >= 1 (ge row): y >= 0 and objective = b @ y
    lp = L.from_rows([1.0], [([1.0], "ge", 1.0)])
    sol = L.solve(lp)
    assert sol.y[0] == pytest.approx(1.0)
    # max -x, x >= 1: the same multiplier flips sign
    lp = L.from_rows([-1.0], [([1.0], "ge", 1.0)], sense="max")
    sol = L.solve(lp)
    assert sol.y[0] == pytest.approx(-1.0)
    assert L.dual_objective(lp, sol.y) == pytest.approx(-1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_dump_round_trip(seed):
    lp = random_small_lp(np.random.default_rng(seed))
    text = L.dump_lp(lp)
    back = L.load_lp(text)
    assert L.dump_lp(back) == text
    for name in ("c", "A", "b", "lower", "upper"):
        np.testing.assert_array_equal(getattr(back, name), getattr(lp, name))
    assert back.row_kinds == lp.row_kinds and back.sense == lp.sense


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        L.load_lp("hello\nend\n")


def test_certificate_detects_bad_point():
    lp = beale()
    sol = L.solve(lp)
    sol.x = sol.x + 1.0
    assert not L.check_certificate(lp, sol).ok()


def test_trivial_examples():
    sol = L.solve(L.from_rows([1.0], [([1.0], "le", 3.0)], sense="max"))
    assert sol.optimal and sol.objective == 3.0
    sol = L.solve(L.from_rows([0.0], [([1.0], "eq", 1.0), ([1.0], "eq", 2.0)]))
    assert sol.status == L.INFEASIBLE
    lp = L.from_rows([0.0, 0.0], [([1.0, 1.0], "le", 1.0)])
    rep = L.check_certificate(lp, L.solve(lp))
    assert rep.duality_gap == 0.0


@pytest.mark.parametrize("seed", range(15))
def test_scaling_keeps_basis_and_is_deterministic(seed):
    lp = random_small_lp(np.random.default_rng(300 + seed))
    a, b = L.solve(lp), L.solve(lp)
    assert a.status == b.status and a.basis == b.basis
    np.testing.assert_array_equal(a.x, b.x)
    if a.optimal:
        for lam in (2.0, 10.0):
            s = L.solve(L.LinearProgram(lp.c * lam, lp.A, lp.b, lp.row_kinds, lp.lower, lp.upper, lp.sense))
            assert s.basis == a.basis
