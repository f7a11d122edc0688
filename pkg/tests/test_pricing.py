import logging
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from superhedge import lp as L
from superhedge.block_example import BlockMeasure, discretize_block
from superhedge.coupling import GridCoupling, best_gain, expectation, in_Pi, penalized_value
from superhedge.marginals import DiscreteMarginal
from superhedge.payoff import PayoffSpec, add_static, growth_constant
from superhedge.pricing import (
    Instance,
    SemiStaticStrategy,
    SolverOptions,
    certified_threshold,
    constrained_dual_price,
    dual_price,
    martingale_feasible,
    martingale_lp,
    paired_prices,
    paired_unconstrained,
    penalized_lp,
    penalized_primal_price,
    primal_price,
    sweep_bounds,
    tildeP_estimate,
    verify_superhedge,
)
from _instances import random_instances, random_ordered_marginals, random_table, vertex_optimum

DIRAC = DiscreteMarginal.dirac(1.0)
SPREAD = DiscreteMarginal([0.0, 2.0], [0.5, 0.5])
VIA_DUAL = SolverOptions(formulation="via_dual")
DIRECT = SolverOptions(formulation="direct")


def highs_value(lp):
    kinds = np.array(lp.row_kinds)
    sign = -1.0 if lp.sense == "max" else 1.0
    eq, ge, le = kinds == "eq", kinds == "ge", kinds == "le"
    A_ub = np.vstack([lp.A[le], -lp.A[ge]])
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]])
    res = linprog(
        sign * lp.c,
        A_eq=lp.A[eq] if eq.any() else None,
        b_eq=lp.b[eq] if eq.any() else None,
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        bounds=list(zip(lp.lower, [None if math.isinf(u) else u for u in lp.upper])),
        method="highs",
    )
    assert res.status == 0
    return sign * res.fun


def test_spread_forward_start():
    phi = PayoffSpec.forward_start(1.0)
    p = primal_price([DIRAC, SPREAD], phi)
    d = dual_price([DIRAC, SPREAD], phi)
    assert p.value == pytest.approx(0.5, abs=1e-12)
    assert d.value == pytest.approx(0.5, abs=1e-12)
    assert d.residuals["superhedge_passed"]
    assert p.diagnostics["strassen_agrees"]


def test_identical_marginals_indicator_grid_value_is_zero():
    mu = DiscreteMarginal.midpoint_grid(6)
    phi = PayoffSpec.indicator_offdiagonal()
    p, d = primal_price([mu, mu], phi), dual_price([mu, mu], phi)
    assert abs(p.value) < 1e-10 and abs(d.value) < 1e-10
    # the optimal coupling is the diagonal, the only martingale coupling here
    np.testing.assert_allclose(p.certificate.mass, np.diag(mu.weights), atol=1e-10)


def test_infeasible_marginals():
    phi = PayoffSpec.forward_start(1.0)
    p = primal_price([SPREAD, DIRAC], phi)
    assert p.status == L.INFEASIBLE and p.diagnostics["strassen_agrees"]
    for opts in (DIRECT, VIA_DUAL):
        d = dual_price([SPREAD, DIRAC], phi, opts)
        assert d.status == L.UNBOUNDED and d.value == -math.inf
    assert not martingale_feasible([SPREAD, DIRAC])
    # constrained problems stay finite
    dn, pn = paired_prices([SPREAD, DIRAC], phi, 1.0)
    assert dn.optimal and dn.value == pytest.approx(pn.value, abs=1e-9)


@pytest.mark.parametrize("seed", range(12))
def test_primal_matches_polytope_vertices(seed):
    rng = np.random.default_rng(seed)
    while True:
        mus = random_ordered_marginals(rng, 2, max_atoms=3)
        if all(len(mu) <= 3 for mu in mus):
            break
    phi = random_table(rng, tuple(mu.support for mu in mus))
    lp = martingale_lp(Instance(mus, phi))
    best, _ = vertex_optimum(lp.c, lp.A, lp.b, lp.row_kinds, lp.lower, np.full(lp.n_cols, 1.0), "max")
    rep = primal_price(mus, phi)
    assert rep.value == pytest.approx(best, abs=1e-9)
    ok, dev = in_Pi(rep.certificate, mus)
    assert ok and best_gain(rep.certificate, 1.0) < 1e-9


@pytest.mark.parametrize("mus,phi", random_instances(7, 10))
def test_formulations_agree(mus, phi):
    inst = Instance(mus, phi)
    p = primal_price(inst)
    d_direct, d_dual = dual_price(inst, None, DIRECT), dual_price(inst, None, VIA_DUAL)
    assert d_direct.value == pytest.approx(p.value, abs=1e-7)
    assert d_dual.value == pytest.approx(p.value, abs=1e-7)
    assert d_direct.residuals["superhedge_passed"] and d_dual.residuals["superhedge_passed"]
    for N in (0.5, 3.0):
        a = constrained_dual_price(inst, None, N, DIRECT)
        b = constrained_dual_price(inst, None, N, VIA_DUAL)
        pn = penalized_primal_price(inst, None, N)
        ref = highs_value(penalized_lp(inst, N))
        for rep in (a, b, pn):
            assert rep.value == pytest.approx(ref, abs=1e-7)
        for rep in (a, b):
            assert rep.residuals["superhedge_passed"]
            assert rep.certificate.bound == N


def test_penalized_certificate_is_coherent():
    mus, phi = random_instances(3, 1)[0]
    rep = penalized_primal_price(mus, phi, 2.0)
    q = rep.certificate
    assert isinstance(q, GridCoupling)
    assert penalized_value(q, phi, 2.0) == pytest.approx(rep.value, abs=1e-8)


def test_paired_shares_solve_for_large_instances():
    mu = DiscreteMarginal.midpoint_grid(8)
    phi = PayoffSpec.indicator_offdiagonal()
    p, d = paired_unconstrained([mu, mu], phi, VIA_DUAL)
    assert p.diagnostics["formulation"] == "direct" and d.diagnostics["formulation"] == "via_dual"
    assert abs(p.value - d.value) < 1e-9


def test_verify_superhedge_rejects_cheap_strategy():
    grids = (np.array([1.0]), np.array([0.0, 2.0]))
    vals = np.array([[0.0, 1.0]])
    good = SemiStaticStrategy(([0.5], [0.0, 0.0]), ([0.5],))
    bad = SemiStaticStrategy(([0.4], [0.0, 0.0]), ([0.5],))
    assert verify_superhedge(good, vals, grids).passed
    rep = verify_superhedge(bad, vals, grids)
    assert not rep.passed and rep.min_slack == pytest.approx(-0.1)
    with pytest.raises(ValueError):
        SemiStaticStrategy(([0.0], [0.0, 0.0]), ([2.0],), bound=1.0)


def test_sweep_monotone_and_reaches_D():
    mus, phi = random_instances(11, 1)[0]
    inst = Instance(mus, phi)
    table = sweep_bounds(inst, None, [0.25, 1.0], include_threshold=True)
    Ns = [r.N for r in table.rows]
    assert table.violations == []
    assert Ns[-1] == table.threshold > 1.0
    assert table.rows[-1].D_N == pytest.approx(table.D, abs=1e-6)
    vals = [r.D_N for r in table.rows]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
    csv = table.to_csv()
    assert csv.splitlines()[0] == "N,D_N,P_N,gap,D,P"
    assert len(csv.splitlines()) == len(Ns) + 1


def test_sweep_constant_payoff_and_input_checks():
    grids = (DIRAC.support, SPREAD.support)
    table = sweep_bounds([DIRAC, SPREAD], PayoffSpec.constant(2.5, grids), [1.0, 2.0, 3.0], SolverOptions(threads=2))
    assert {round(r.D_N, 12) for r in table.rows} == {2.5}
    with pytest.raises(ValueError):
        sweep_bounds([DIRAC, SPREAD], PayoffSpec.constant(1.0, grids), [1.0, 1.0])
    with pytest.raises(ValueError):
        sweep_bounds([DIRAC, SPREAD], PayoffSpec.constant(1.0, grids), [2.0, 1.0])


@pytest.mark.parametrize("mus,phi", random_instances(21, 4))
def test_translation_identity(mus, phi):
    grids = tuple(mu.support for mu in mus)
    T = len(mus)
    K = growth_constant(phi, grids).K
    legs = [K * (1.0 / T + g) for g in grids]
    base = dual_price(mus, phi).value
    shifted = dual_price(mus, add_static(phi, grids, legs)).value
    mu_v = sum(float(mu.weights @ v) for mu, v in zip(mus, legs))
    assert shifted - base == pytest.approx(mu_v, abs=1e-7)


def test_iteration_limit_is_reported():
    mus, phi = random_instances(5, 1)[0]
    rep = primal_price(mus, phi, SolverOptions(max_iters=1))
    assert rep.status == L.ITERATION_LIMIT and math.isnan(rep.value)


def test_tilde_p_on_block_measures():
    phi = PayoffSpec.indicator_offdiagonal()
    est = tildeP_estimate(phi, [BlockMeasure(M) for M in (1, 2, 4, 8, 16, 32, 64)], tol=0.01)
    assert est.gains == [1 / (4 * M) for M in (1, 2, 4, 8, 16, 32, 64)]
    assert est.limsup_estimate == 1.0 and est.converged
    assert est.tail_suprema == [1.0] * 7


def test_tilde_p_on_grid_sequence():
    phi = PayoffSpec.indicator_offdiagonal()
    seq = [discretize_block(M, 20) for M in (1, 2, 4, 5, 10, 20)]
    est = tildeP_estimate(phi, seq, tol=0.01)
    assert est.payoffs == pytest.approx([1 - M / 20 for M in (1, 2, 4, 5, 10, 20)])
    assert est.gains[-1] == 0.0 and est.converged
    assert est.limsup_estimate == pytest.approx(0.95)
    mu = DiscreteMarginal.midpoint_grid(20)
    other = GridCoupling.product([mu, DiscreteMarginal.uniform(mu.support + 1.0)])
    with pytest.raises(ValueError):
        tildeP_estimate(phi, [seq[0], other])
    with pytest.raises(ValueError):
        tildeP_estimate(phi, [])


def test_lipschitz_scale_does_not_certify_stabilization():
    # uniform 20-point grid, off-diagonal indicator: D = 0 but D^N > 0 far above the scale
    mu = DiscreteMarginal.midpoint_grid(20)
    inst = Instance([mu, mu], PayoffSpec.indicator_offdiagonal())
    scale = inst.lipschitz_scale()
    assert scale == pytest.approx(20.0)
    assert constrained_dual_price(inst, None, 5 * scale).value > 0.5
    d = dual_price(inst)
    Nstar = certified_threshold(d.certificate)
    assert constrained_dual_price(inst, None, Nstar).value == pytest.approx(d.value, abs=1e-7)


def test_instance_threshold():
    mus = [DiscreteMarginal.uniform([0.0, 0.5, 1.0])] * 2
    inst = Instance(mus, PayoffSpec.indicator_offdiagonal())
    assert inst.lipschitz_scale() == pytest.approx(2.0)
    assert inst.n_paths == 9 and inst.n_hist == [3]


def test_indicator_sweep_reaches_D():
    mu = DiscreteMarginal.midpoint_grid(20)
    Ns = [2.0**k for k in range(11)]
    table = sweep_bounds([mu, mu], PayoffSpec.indicator_offdiagonal(), Ns)
    assert table.violations == []
    assert abs(table.rows[-1].D_N - table.D) <= 1e-6
    assert table.rows[0].D_N == pytest.approx(0.995, abs=1e-9)


@pytest.mark.parametrize("mus,phi", random_instances(31, 6))
def test_sandwich(mus, phi):
    inst = Instance(mus, phi)
    p, d = paired_unconstrained(inst)
    for N in (0.5, 2.0, 8.0):
        dn, pn = paired_prices(inst, None, N)
        assert p.value <= pn.value + 1e-9
        assert pn.value <= dn.value + 1e-6
        assert d.value <= dn.value + 1e-7


def test_constant_payoff_all_functionals():
    mus, _ = random_instances(41, 1)[0]
    grids = tuple(mu.support for mu in mus)
    phi = PayoffSpec.constant(2.0, grids)
    assert primal_price(mus, phi).value == pytest.approx(2.0)
    assert dual_price(mus, phi).value == pytest.approx(2.0)
    for N in (0.1, 1.0, 10.0):
        assert constrained_dual_price(mus, phi, N).value == pytest.approx(2.0)
    zero = SemiStaticStrategy.zero(tuple(len(g) for g in grids))
    rep = verify_superhedge(zero, PayoffSpec.constant(1.0, grids), grids)
    assert not rep.passed and rep.min_slack == -1.0


def test_constant_hedge_on_grid():
    mu = DiscreteMarginal.midpoint_grid(10)
    strat = SemiStaticStrategy((np.ones(10), np.zeros(10)), (np.zeros(10),))
    rep = verify_superhedge(strat, PayoffSpec.indicator_offdiagonal(), (mu.support, mu.support))
    assert rep.passed and rep.min_slack == 0.0


def test_truncation_stability():
    from superhedge.payoff import truncate, truncation_error_bound

    mus = [DiscreteMarginal([2.0], [1.0]),
           DiscreteMarginal([0.0, 1.0, 2.0, 3.0, 5.0], [0.2, 0.2, 0.2, 0.3, 0.1])]
    assert check_order(mus)
    phi = PayoffSpec.basket_call(1.5)
    grids = tuple(mu.support for mu in mus)
    K = growth_constant(phi, grids).K
    for n in (2.0, 3.0, 4.0):
        diff = abs(dual_price(mus, phi).value - dual_price(mus, truncate(phi, n)).value)
        assert diff <= truncation_error_bound(mus, K, n) + 1e-9


def check_order(mus):
    from superhedge.marginals import check_convex_order

    return check_convex_order(mus).feasible


def test_tilde_p_constant_martingale_sequence():
    q = primal_price([DIRAC, SPREAD], PayoffSpec.forward_start(1.0)).certificate
    est = tildeP_estimate(PayoffSpec.forward_start(1.0), [q] * 4)
    assert est.gains == pytest.approx([0.0] * 4, abs=1e-12)
    assert est.limsup_estimate == pytest.approx(expectation(q, PayoffSpec.forward_start(1.0)))
