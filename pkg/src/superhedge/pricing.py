"""Superhedging prices and martingale transport values as finite LPs.

Four functionals on a discretized instance (marginals ``mus`` on finite
grids, payoff ``phi`` tabulated on the product grid):

* ``P``   -- max ``E_Q[Phi]`` over martingale couplings,
* ``D``   -- min cost of a pointwise semi-static superhedge,
* ``D^N`` -- as ``D`` with ``|Delta_t| <= N``,
* ``P^N`` -- max ``E_Q[Phi] - A^N_T(Q)`` over all couplings.

``P``/``D`` and ``P^N``/``D^N`` are LP dual pairs.  Every report carries a
certificate (coupling or strategy) that is re-verified without the solver.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import lp as lpmod
from .coupling import GridCoupling, best_gain, expectation, in_Pi, marginal_of
from .marginals import DiscreteMarginal, check_convex_order
from .payoff import PayoffSpec, grid_shape, tabulate

log = logging.getLogger(__name__)

SLACK_TOL = 1e-8
STRONG_DUALITY_TOL = 1e-7
CONSTRAINED_DUALITY_TOL = 1e-6
COHERENCE_TOL = 1e-8
# residual level at which an optimal LP basis is rejected and re-solved
CERTIFICATE_TOL = 1e-7
# superhedge LPs have one row per path; beyond this they are solved through
# the (much smaller) transport LP and its multipliers
DIRECT_ROW_LIMIT = 1500


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iters: int | None = None
    formulation: str = "auto"  # auto | direct | via_dual
    threads: int = 1
    pricing: str = "steepest"  # steepest | dantzig

    def __post_init__(self):
        if self.pricing not in ("steepest", "dantzig"):
            raise ValueError(f"unknown pricing rule {self.pricing!r}")
        if self.formulation not in ("auto", "direct", "via_dual"):
            raise ValueError(f"unknown formulation {self.formulation!r}")


DEFAULT_OPTIONS = SolverOptions()


class Instance:
    """Marginals plus payoff, with the index maps shared by all LPs."""

    def __init__(self, mus: Sequence[DiscreteMarginal], phi: PayoffSpec):
        if len(mus) < 2:
            raise ValueError("need T >= 2 marginals")
        self.mus = list(mus)
        self.phi = phi
        self.grids = tuple(mu.support for mu in self.mus)
        self.shape = grid_shape(self.grids)
        self.T = len(self.mus)
        self.n_paths = int(np.prod(self.shape))
        self.values = tabulate(phi, self.grids)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return np.unravel_index(np.arange(self.n_paths), self.shape)

    @cached_property
    def n_hist(self) -> list[int]:
        """Number of histories ``(x_1..x_t)`` for ``t = 1..T-1``."""
        return [int(np.prod(self.shape[:t])) for t in range(1, self.T)]

    @cached_property
    def marginal_matrix(self) -> np.ndarray:
        """Rows ``(t, j)``: indicator that a path has ``x_t = grid_t[j]``."""
        rows = np.zeros((sum(self.shape), self.n_paths))
        off = 0
        cols = np.arange(self.n_paths)
        for t, n in enumerate(self.shape):
            rows[off + self.coords[t], cols] = 1.0
            off += n
        return rows

    @cached_property
    def martingale_matrix(self) -> np.ndarray:
        """Rows ``(t, h)``: path increment ``x_{t+1} - x_t`` on paths through ``h``."""
        rows = np.zeros((sum(self.n_hist), self.n_paths))
        cols = np.arange(self.n_paths)
        off = 0
        for t in range(1, self.T):
            stride = int(np.prod(self.shape[t:]))
            hist = cols // stride
            incr = self.grids[t][self.coords[t]] - self.grids[t - 1][self.coords[t - 1]]
            rows[off + hist, cols] = incr
            off += self.n_hist[t - 1]
        return rows

    @cached_property
    def marginal_rhs(self) -> np.ndarray:
        return np.concatenate([mu.weights for mu in self.mus])

    def split_u(self, vec) -> list[np.ndarray]:
        out, off = [], 0
        for n in self.shape:
            out.append(np.array(vec[off : off + n]))
            off += n
        return out

    def split_delta(self, vec) -> list[np.ndarray]:
        out, off = [], 0
        for t in range(1, self.T):
            h = self.n_hist[t - 1]
            out.append(np.array(vec[off : off + h]).reshape(self.shape[:t]))
            off += h
        return out

    def payoff_range(self) -> float:
        return float(self.values.max() - self.values.min())

    def min_spacing(self) -> float:
        pts = np.unique(np.concatenate(self.grids))
        gaps = np.diff(pts)
        gaps = gaps[gaps > 0]
        return float(gaps.min()) if gaps.size else math.inf

    def lipschitz_scale(self) -> float:
        """Grid Lipschitz scale ``(max Phi - min Phi) / (min positive grid spacing)``, at least 1.

        A natural size for trading positions, but *not* a bound on the
        positions an optimal superhedge needs: on the ``n``-point uniform
        grid with the off-diagonal indicator, ``D^N`` stays well above ``D``
        for ``N`` many times this scale.  :func:`certified_threshold` gives a
        level that provably suffices.
        """
        spacing = self.min_spacing()
        if not math.isfinite(spacing):
            return 1.0
        return max(self.payoff_range() / spacing, 1.0)


# -- strategies ----------------------------------------------------------------


@dataclass(frozen=True)
class SemiStaticStrategy:
    """Static legs ``u_t`` on axis grids and dynamic legs ``Delta_t`` on histories.

    ``delta[t-1]`` has shape ``(n_1, ..., n_t)``.  ``bound`` is ``N`` for the
    constrained class and ``inf`` for unconstrained strategies.
    """

    u: tuple
    delta: tuple
    bound: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(np.asarray(v, dtype=float) for v in self.u))
        object.__setattr__(self, "delta", tuple(np.asarray(d, dtype=float) for d in self.delta))
        if len(self.delta) != len(self.u) - 1:
            raise ValueError("need T static legs and T-1 dynamic legs")
        if not self.bound > 0:
            raise ValueError("bound must be positive")
        if math.isfinite(self.bound):
            worst = max((float(np.abs(d).max(initial=0.0)) for d in self.delta), default=0.0)
            if worst > self.bound + 1e-9:
                raise ValueError(f"|Delta| reaches {worst!r}, above the bound {self.bound!r}")

    @classmethod
    def zero(cls, shape, bound=math.inf):
        return cls(
            tuple(np.zeros(n) for n in shape),
            tuple(np.zeros(shape[:t]) for t in range(1, len(shape))),
            bound,
        )

    def cost(self, mus: Sequence[DiscreteMarginal]) -> float:
        """``mu(u) = sum_t sum_j mu_t(j) u_t(j)``."""
        return float(sum(mu.weights @ u for mu, u in zip(mus, self.u)))

    def wealth(self, grids) -> np.ndarray:
        """``Psi(x) = sum_t u_t(x_t) + sum_t Delta_t(x_1..x_t) (x_{t+1} - x_t)`` on the grid."""
        T = len(grids)
        shape = tuple(len(g) for g in grids)
        psi = np.zeros(shape)
        for t, u in enumerate(self.u):
            s = [1] * T
            s[t] = shape[t]
            psi = psi + u.reshape(s)
        for t in range(1, T):
            d = self.delta[t - 1].reshape(shape[:t] + (1,) * (T - t))
            s_next = [1] * T
            s_next[t] = shape[t]
            s_prev = [1] * T
            s_prev[t - 1] = shape[t - 1]
            incr = grids[t].reshape(s_next) - grids[t - 1].reshape(s_prev)
            psi = psi + d * incr
        return psi

    def to_dict(self) -> dict:
        return {
            "bound": None if math.isinf(self.bound) else self.bound,
            "u": [v.tolist() for v in self.u],
            "delta": [d.ravel().tolist() for d in self.delta],
        }


@dataclass(frozen=True)
class SlackReport:
    min_slack: float
    argmin: tuple[float, ...]
    passed: bool

    def to_dict(self) -> dict:
        return {"min_slack": self.min_slack, "argmin": list(self.argmin), "passed": self.passed}


def verify_superhedge(strategy: SemiStaticStrategy, phi: PayoffSpec | np.ndarray, grids, tol: float = SLACK_TOL) -> SlackReport:
    """Minimum over grid paths of ``Psi_{u,Delta}(x) - Phi(x)``; passes iff ``>= -tol``."""
    grids = tuple(np.asarray(g, dtype=float) for g in grids)
    vals = phi if isinstance(phi, np.ndarray) else tabulate(phi, grids)
    slack = strategy.wealth(grids) - vals
    flat = int(np.argmin(slack))
    idx = np.unravel_index(flat, slack.shape)
    m = float(slack.ravel()[flat])
    return SlackReport(m, tuple(float(g[i]) for g, i in zip(grids, idx)), m >= -tol)


def certified_threshold(strategy: SemiStaticStrategy) -> float:
    """``max_t sup |Delta_t|`` of a ``D``-optimal strategy.

    That strategy is admissible for ``D^N`` at this level, so
    ``D <= D^N <= D`` for every larger ``N``.
    """
    return max((float(np.abs(d).max(initial=0.0)) for d in strategy.delta), default=0.0)


# -- reports ---------------------------------------------------------------------


@dataclass
class PriceReport:
    functional: str
    status: str
    value: float
    N: float | None = None
    certificate: GridCoupling | SemiStaticStrategy | None = None
    residuals: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == lpmod.OPTIMAL

    def to_dict(self) -> dict:
        cert = None
        if isinstance(self.certificate, GridCoupling):
            cert = {"type": "coupling", **self.certificate.to_dict()}
        elif isinstance(self.certificate, SemiStaticStrategy):
            cert = {"type": "strategy", **self.certificate.to_dict()}
        return {
            "functional": self.functional,
            "status": self.status,
            "value": self.value,
            "N": self.N,
            "residuals": dict(self.residuals),
            "diagnostics": dict(self.diagnostics),
            "certificate": cert,
        }


def _lp_diag(lp: lpmod.LinearProgram, sol: lpmod.LpSolution, started: float, formulation: str) -> dict:
    return {
        "formulation": formulation,
        "lp_rows": lp.n_rows,
        "lp_cols": lp.n_cols,
        "iterations": sol.iterations,
        "bland_pivots": sol.bland_pivots,
        "wall_time": time.perf_counter() - started,
    }


def _cert_residuals(lp, sol) -> dict:
    rep = lpmod.check_certificate(lp, sol)
    return {
        "lp_primal": rep.primal_residual,
        "lp_dual": rep.dual_residual,
        "lp_complementarity": rep.complementarity,
        "lp_duality_gap": rep.duality_gap,
    }


def _use_direct(inst: Instance, options: SolverOptions) -> bool:
    if options.formulation == "direct":
        return True
    if options.formulation == "via_dual":
        return False
    return inst.n_paths <= DIRECT_ROW_LIMIT


# -- LP builders -------------------------------------------------------------------


def martingale_lp(inst: Instance, objective=None) -> lpmod.LinearProgram:
    """``max values @ Q`` over ``Q >= 0`` with marginal and martingale equalities."""
    A = np.vstack([inst.marginal_matrix, inst.martingale_matrix])
    b = np.concatenate([inst.marginal_rhs, np.zeros(inst.martingale_matrix.shape[0])])
    c = inst.values.ravel() if objective is None else np.asarray(objective, dtype=float).ravel()
    return lpmod.LinearProgram(c=c, A=A, b=b, row_kinds=("eq",) * b.size, sense="max")


def penalized_lp(inst: Instance, N: float) -> lpmod.LinearProgram:
    """``max values @ Q - N sum w`` with ``w_h >= |E_Q[(S_{t+1} - S_t) 1_h]|``."""
    Mg, Mt = inst.marginal_matrix, inst.martingale_matrix
    P, H = inst.n_paths, Mt.shape[0]
    eye = np.eye(H)
    A = np.vstack(
        [
            np.hstack([Mg, np.zeros((Mg.shape[0], H))]),
            np.hstack([-Mt, eye]),
            np.hstack([Mt, eye]),
        ]
    )
    b = np.concatenate([inst.marginal_rhs, np.zeros(2 * H)])
    kinds = ("eq",) * Mg.shape[0] + ("ge",) * (2 * H)
    c = np.concatenate([inst.values.ravel(), np.full(H, -float(N))])
    return lpmod.LinearProgram(c=c, A=A, b=b, row_kinds=kinds, sense="max")


def superhedge_lp(inst: Instance, N: float | None = None) -> lpmod.LinearProgram:
    """``min mu(u)`` over free ``u`` and ``Delta`` (boxed by ``N`` if given), one row per path."""
    Mg, Mt = inst.marginal_matrix, inst.martingale_matrix
    A = np.hstack([Mg.T, Mt.T])
    nu, H = Mg.shape[0], Mt.shape[0]
    c = np.concatenate([inst.marginal_rhs, np.zeros(H)])
    lower = np.full(nu + H, -np.inf)
    upper = np.full(nu + H, np.inf)
    if N is not None:
        lower[nu:] = -N
        upper[nu:] = N
    return lpmod.LinearProgram(
        c=c, A=A, b=inst.values.ravel(), row_kinds=("ge",) * inst.n_paths, lower=lower, upper=upper, sense="min"
    )


def _solve(lp, options: SolverOptions):
    """Solve and re-verify; an optimal basis failing its certificate is re-solved with the other pricing rule."""
    sol = lpmod.solve(lp, tol=options.tol, max_iters=options.max_iters, pricing=options.pricing)
    if sol.status != lpmod.OPTIMAL or lpmod.check_certificate(lp, sol).ok(CERTIFICATE_TOL, CERTIFICATE_TOL):
        return sol
    other = "dantzig" if options.pricing == "steepest" else "steepest"
    log.warning("LP certificate check failed; re-solving with %s pricing", other)
    sol = lpmod.solve(lp, tol=options.tol, max_iters=options.max_iters, pricing=other)
    if sol.status == lpmod.OPTIMAL and not lpmod.check_certificate(lp, sol).ok(CERTIFICATE_TOL, CERTIFICATE_TOL):
        raise RuntimeError("LP solution failed its certificate check under both pricing rules")
    return sol


# -- functionals -------------------------------------------------------------------


def _as_instance(mus, phi) -> Instance:
    return mus if isinstance(mus, Instance) else Instance(mus, phi)


def martingale_feasible(mus: Sequence[DiscreteMarginal], options: SolverOptions = DEFAULT_OPTIONS) -> bool:
    """LP verdict on whether a martingale coupling of ``mus`` exists on their grids."""
    inst = Instance(mus, PayoffSpec.constant(0.0, tuple(mu.support for mu in mus)))
    sol = _solve(martingale_lp(inst), options)
    if sol.status == lpmod.ITERATION_LIMIT:
        raise RuntimeError("feasibility LP hit the iteration limit")
    return sol.status == lpmod.OPTIMAL


def _primal_report(inst: Instance, lp, sol, started: float) -> PriceReport:
    order = check_convex_order(inst.mus)
    diag = _lp_diag(lp, sol, started, "direct")
    diag["convex_order"] = order.feasible
    if sol.status == lpmod.UNBOUNDED:  # pragma: no cover - finite grid, finite payoff
        raise AssertionError("martingale transport LP cannot be unbounded")
    if sol.status != lpmod.OPTIMAL:
        if sol.status == lpmod.INFEASIBLE and order.feasible:
            log.warning("martingale LP infeasible although the convex-order check passed")
        diag["strassen_agrees"] = sol.status == lpmod.INFEASIBLE and not order.feasible
        return PriceReport("P", sol.status, math.nan, diagnostics=diag)
    diag["strassen_agrees"] = order.feasible
    if not order.feasible:
        log.warning("martingale LP feasible although the convex-order check failed")
    q = GridCoupling.from_flat(inst.grids, sol.x)
    ok, dev = in_Pi(q, inst.mus)
    res = _cert_residuals(lp, sol)
    res.update(marginal_deviation=dev, martingale_gain=best_gain(q, 1.0), expectation=expectation(q, inst.values))
    return PriceReport("P", sol.status, sol.objective, certificate=q, residuals=res, diagnostics=diag)


def primal_price(mus, phi: PayoffSpec | None = None, options: SolverOptions = DEFAULT_OPTIONS) -> PriceReport:
    """``P(Phi)``: martingale optimal transport value on the grid."""
    inst = _as_instance(mus, phi)
    started = time.perf_counter()
    lp = martingale_lp(inst)
    return _primal_report(inst, lp, _solve(lp, options), started)


def _strategy_report(functional, inst, u_vec, d_vec, bound, value, status, diag, extra_res=None):
    strat = SemiStaticStrategy(
        tuple(inst.split_u(u_vec)), tuple(inst.split_delta(d_vec)), math.inf if bound is None else bound
    )
    slack = verify_superhedge(strat, inst.values, inst.grids)
    res = {"min_slack": slack.min_slack, "superhedge_passed": slack.passed, "cost": strat.cost(inst.mus)}
    if extra_res:
        res.update(extra_res)
    return PriceReport(functional, status, value, N=bound, certificate=strat, residuals=res, diagnostics=diag)


def _dual_from_transport(inst: Instance, lp, sol, started: float) -> PriceReport:
    """``D`` read off the multipliers of the transport LP (strong duality)."""
    diag = _lp_diag(lp, sol, started, "via_dual")
    if sol.status == lpmod.INFEASIBLE:
        return PriceReport("D", lpmod.UNBOUNDED, -math.inf, diagnostics=diag)
    if sol.status != lpmod.OPTIMAL:
        return PriceReport("D", sol.status, math.nan, diagnostics=diag)
    nu = sum(inst.shape)
    value = lpmod.dual_objective(lp, sol.y)
    return _strategy_report("D", inst, sol.y[:nu], sol.y[nu:], None, value, sol.status, diag, _cert_residuals(lp, sol))


def dual_price(mus, phi: PayoffSpec | None = None, options: SolverOptions = DEFAULT_OPTIONS) -> PriceReport:
    """``D(Phi)``: cheapest semi-static superhedge with unconstrained ``Delta``.

    Unbounded below exactly when no martingale coupling exists on the grid.
    """
    inst = _as_instance(mus, phi)
    started = time.perf_counter()
    nu = sum(inst.shape)
    if _use_direct(inst, options):
        lp = superhedge_lp(inst)
        sol = _solve(lp, options)
        diag = _lp_diag(lp, sol, started, "direct")
        if sol.status == lpmod.UNBOUNDED:
            return PriceReport("D", lpmod.UNBOUNDED, -math.inf, diagnostics=diag)
        if sol.status != lpmod.OPTIMAL:
            return PriceReport("D", sol.status, math.nan, diagnostics=diag)
        return _strategy_report(
            "D", inst, sol.x[:nu], sol.x[nu:], None, sol.objective, sol.status, diag, _cert_residuals(lp, sol)
        )
    lp = martingale_lp(inst)
    return _dual_from_transport(inst, lp, _solve(lp, options), started)


def paired_unconstrained(mus, phi=None, options: SolverOptions = DEFAULT_OPTIONS) -> tuple[PriceReport, PriceReport]:
    """``(P, D)``.  Large instances share one transport LP solve for both sides."""
    inst = _as_instance(mus, phi)
    if _use_direct(inst, options):
        return primal_price(inst, None, options), dual_price(inst, None, options)
    started = time.perf_counter()
    lp = martingale_lp(inst)
    sol = _solve(lp, options)
    return _primal_report(inst, lp, sol, started), _dual_from_transport(inst, lp, sol, started)


def _penalized_solve(inst: Instance, N: float, options: SolverOptions):
    started = time.perf_counter()
    lp = penalized_lp(inst, N)
    sol = _solve(lp, options)
    return lp, sol, started


def _dn_from_penalized(inst, N, lp, sol, started) -> PriceReport:
    diag = _lp_diag(lp, sol, started, "via_dual")
    if sol.status != lpmod.OPTIMAL:
        return PriceReport("D^N", sol.status, math.nan, N=N, diagnostics=diag)
    nu, H = sum(inst.shape), inst.martingale_matrix.shape[0]
    y = sol.y
    u = y[:nu]
    delta = y[nu + H : nu + 2 * H] - y[nu : nu + H]
    # multipliers can overshoot the box by round-off
    delta = np.clip(delta, -N, N)
    value = float(inst.marginal_rhs @ u)
    return _strategy_report("D^N", inst, u, delta, N, value, sol.status, diag, _cert_residuals(lp, sol))


def _pn_from_penalized(inst, N, lp, sol, started) -> PriceReport:
    diag = _lp_diag(lp, sol, started, "direct")
    if sol.status != lpmod.OPTIMAL:
        return PriceReport("P^N", sol.status, math.nan, N=N, diagnostics=diag)
    q = GridCoupling.from_flat(inst.grids, sol.x[: inst.n_paths])
    recomputed = expectation(q, inst.values) - best_gain(q, N)
    ok, dev = in_Pi(q, inst.mus)
    res = _cert_residuals(lp, sol)
    res.update(
        marginal_deviation=dev,
        expectation=expectation(q, inst.values),
        gain=best_gain(q, N),
        recomputed_objective=recomputed,
        coherence=abs(recomputed - sol.objective),
    )
    if res["coherence"] > COHERENCE_TOL:
        raise AssertionError(
            f"penalized objective {sol.objective!r} disagrees with E_Q[Phi] - A^N(Q) = {recomputed!r}"
        )
    return PriceReport("P^N", sol.status, sol.objective, N=N, certificate=q, residuals=res, diagnostics=diag)


def constrained_dual_price(mus, phi: PayoffSpec | None, N: float, options: SolverOptions = DEFAULT_OPTIONS) -> PriceReport:
    """``D^N(Phi)``: cheapest superhedge with ``|Delta_t| <= N``."""
    if not N > 0:
        raise ValueError("N must be positive")
    inst = _as_instance(mus, phi)
    if _use_direct(inst, options):
        started = time.perf_counter()
        lp = superhedge_lp(inst, N)
        sol = _solve(lp, options)
        diag = _lp_diag(lp, sol, started, "direct")
        if sol.status == lpmod.UNBOUNDED:  # pragma: no cover - bounded below by construction
            raise AssertionError("constrained superhedge LP cannot be unbounded")
        if sol.status != lpmod.OPTIMAL:
            return PriceReport("D^N", sol.status, math.nan, N=N, diagnostics=diag)
        nu = sum(inst.shape)
        return _strategy_report(
            "D^N", inst, sol.x[:nu], sol.x[nu:], N, sol.objective, sol.status, diag, _cert_residuals(lp, sol)
        )
    return _dn_from_penalized(inst, N, *_penalized_solve(inst, N, options))


def penalized_primal_price(mus, phi: PayoffSpec | None, N: float, options: SolverOptions = DEFAULT_OPTIONS) -> PriceReport:
    """``P^N(Phi) = max_Q E_Q[Phi] - A^N_T(Q)`` over all couplings of ``mus``."""
    if not N > 0:
        raise ValueError("N must be positive")
    inst = _as_instance(mus, phi)
    return _pn_from_penalized(inst, N, *_penalized_solve(inst, N, options))


def paired_prices(mus, phi, N, options: SolverOptions = DEFAULT_OPTIONS) -> tuple[PriceReport, PriceReport]:
    """``(D^N, P^N)``.  Large instances share one LP solve; small ones solve both sides."""
    inst = _as_instance(mus, phi)
    if _use_direct(inst, options):
        return constrained_dual_price(inst, None, N, options), penalized_primal_price(inst, None, N, options)
    lp, sol, started = _penalized_solve(inst, N, options)
    return _dn_from_penalized(inst, N, lp, sol, started), _pn_from_penalized(inst, N, lp, sol, started)


# -- sweeps ------------------------------------------------------------------------


@dataclass
class SweepRow:
    N: float
    D_N: float
    P_N: float
    gap: float


@dataclass
class SweepTable:
    """Sweep results.

    ``threshold`` is the certified stabilization level (``inf`` when ``D``
    is unbounded); ``lipschitz_scale`` the grid Lipschitz scale.
    """

    rows: list
    D: float
    P: float
    threshold: float
    lipschitz_scale: float = math.nan
    violations: list = field(default_factory=list)

    HEADER = ("N", "D_N", "P_N", "gap", "D", "P")

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        for r in self.rows:
            lines.append(",".join(format_number(v) for v in (r.N, r.D_N, r.P_N, r.gap, self.D, self.P)))
        return "\n".join(lines) + "\n"


def format_number(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def sweep_bounds(
    mus,
    phi: PayoffSpec | None,
    Ns: Sequence[float],
    options: SolverOptions = DEFAULT_OPTIONS,
    strict: bool = False,
    include_threshold: bool = False,
) -> SweepTable:
    """Paired ``D^N``/``P^N`` solves along increasing ``Ns``.

    Checks that ``D^N`` is nonincreasing, ``D^N >= D``, ``|D^N - P^N|`` is
    within 1e-6, and that ``D^N = D`` once ``N`` reaches the certified
    threshold ``N*`` (:func:`certified_threshold` of the computed ``D``
    optimizer).  Violations are listed in the table and raise when
    ``strict``.  With ``include_threshold`` the certified ``N*`` is
    appended to ``Ns`` when it exceeds the last requested level.
    """
    Ns = [float(n) for n in Ns]
    if not Ns or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("Ns must be nonempty and strictly increasing")
    if Ns[0] <= 0:
        raise ValueError("N must be positive")
    inst = _as_instance(mus, phi)
    p_rep, d_rep = paired_unconstrained(inst, None, options)
    threshold = certified_threshold(d_rep.certificate) if d_rep.optimal else math.inf
    if include_threshold and math.isfinite(threshold) and threshold > Ns[-1]:
        Ns.append(threshold)

    def one(N):
        dn, pn = paired_prices(inst, None, N, options)
        return SweepRow(N, dn.value, pn.value, abs(dn.value - pn.value))

    if options.threads > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            rows = list(pool.map(one, Ns))
    else:
        rows = [one(N) for N in Ns]

    table = SweepTable(
        rows=rows, D=d_rep.value, P=p_rep.value, threshold=threshold, lipschitz_scale=inst.lipschitz_scale()
    )
    v = table.violations
    for prev, cur in zip(rows, rows[1:]):
        if cur.D_N > prev.D_N + STRONG_DUALITY_TOL:
            v.append(f"D^N increased from N={prev.N:g} to N={cur.N:g}")
    for r in rows:
        if r.gap > CONSTRAINED_DUALITY_TOL:
            v.append(f"|D^N - P^N| = {r.gap:.3g} at N={r.N:g}")
        if math.isfinite(table.D) and r.D_N < table.D - STRONG_DUALITY_TOL:
            v.append(f"D^N below D at N={r.N:g}")
    if rows[-1].N >= table.threshold and math.isfinite(table.D) and abs(rows[-1].D_N - table.D) > CONSTRAINED_DUALITY_TOL:
        v.append(f"D^N at N={rows[-1].N:g} >= N* did not reach D")
    if strict and v:
        raise AssertionError("; ".join(v))
    return table


# -- rho-convergent sequences ----------------------------------------------------------


@dataclass
class TildePEstimate:
    gains: list
    payoffs: list
    tail_suprema: list
    limsup_estimate: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "gains": list(self.gains),
            "payoffs": list(self.payoffs),
            "tail_suprema": list(self.tail_suprema),
            "limsup_estimate": self.limsup_estimate,
            "converged": self.converged,
        }


def tildeP_estimate(phi: PayoffSpec, sequence: Sequence, tol: float = 1e-2) -> TildePEstimate:
    """Evaluate a candidate sequence ``Q_k`` for the relaxed primal value.

    Elements are :class:`GridCoupling` objects sharing one set of marginals,
    or continuum measures exposing ``best_gain(N)`` and ``expectation(phi)``.
    Reports ``A^1(Q_k)``, ``E_{Q_k}[Phi]``, the tail suprema
    ``sup_{j >= k} E_{Q_j}[Phi]``, and their running maximum as the limsup
    estimate.  ``converged`` flags ``A^1`` of the last element ``<= tol``.
    Only the supplied sequence is evaluated.
    """
    seq = list(sequence)
    if not seq:
        raise ValueError("empty sequence")
    grid_like = [isinstance(q, GridCoupling) for q in seq]
    if any(grid_like) and not all(grid_like):
        raise ValueError("sequence mixes grid couplings and continuum measures")
    if all(grid_like):
        ref = seq[0]

        mus = [marginal_of(ref, t) for t in range(1, ref.T + 1)]
        for k, q in enumerate(seq[1:], start=1):
            if q.T != ref.T or any(not np.array_equal(a, b) for a, b in zip(q.grids, ref.grids)):
                raise ValueError(f"element {k} lives on a different grid")
            ok, dev = in_Pi(q, mus, tol=1e-9)
            if not ok:
                raise ValueError(f"element {k} has different marginals (deviation {dev:.3g})")
        gains = [best_gain(q, 1.0) for q in seq]
        payoffs = [expectation(q, phi) for q in seq]
    else:
        gains = [float(q.best_gain(1.0)) for q in seq]
        payoffs = [float(q.expectation(phi)) for q in seq]
    tails = list(np.maximum.accumulate(np.array(payoffs)[::-1])[::-1])
    tails = [float(v) for v in tails]
    return TildePEstimate(
        gains=gains,
        payoffs=payoffs,
        tail_suprema=tails,
        limsup_estimate=float(max(tails)),
        converged=gains[-1] <= tol,
    )
