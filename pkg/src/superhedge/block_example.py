"""The diagonal-block counterexample: a payoff with a duality gap in the continuum.

Take ``mu_1 = mu_2 = Lebesgue on [0, 1]`` and ``Phi = 1{x_1 != x_2}``.  The
only martingale coupling is the diagonal, so ``P = 0``, while every
superhedge must pay ``1`` (the constant strategy ``u_1 = 1`` is optimal), so
``D = 1``.  The block measures ``Q_M`` (density ``M`` on the ``M`` diagonal
squares) keep ``E[Phi] = 1`` while their best trading gain ``1/(4M)`` tends
to zero, which is how relaxed primal values recover ``1``.

On the ``n``-point midpoint grid the LP values are ``P = D = 0``; the gap
re-appears through the constrained prices ``D^N = P^N`` as ``n`` grows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .coupling import GridCoupling, best_gain, expectation, penalized_value
from .marginals import DiscreteMarginal
from .payoff import PayoffSpec
from .pricing import (
    CONSTRAINED_DUALITY_TOL,
    DEFAULT_OPTIONS,
    Instance,
    SolverOptions,
    format_number,
    paired_prices,
    paired_unconstrained,
)

GAP_TOL = 1e-8
# grids on which the constant superhedge is checked alongside random pairs
SUITE_GRIDS = (10, 20, 50, 100, 200)


def _check_M(M) -> int:
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    return int(M)


def a1_closed_form(M: int) -> float:
    """Best trading gain ``A^1`` of the block measure: ``1/(4M)``."""
    M = _check_M(M)
    return 1.0 / (4 * M)


def _abs_integral(c: Fraction, a: Fraction, b: Fraction) -> Fraction:
    """``int_a^b |c - x| dx`` exactly."""
    if c <= a:
        return ((b - c) ** 2 - (a - c) ** 2) / 2
    if c >= b:
        return ((c - a) ** 2 - (c - b) ** 2) / 2
    return ((c - a) ** 2 + (b - c) ** 2) / 2


def block_conditional_mean(M: int, i: int) -> Fraction:
    """``E[S_2 | S_1]`` on block ``i``: the block midpoint ``(2i + 1)/(2M)``."""
    return Fraction(2 * i + 1, 2 * M)


def a1_numeric_exact(M: int) -> Fraction:
    """``E|E[S_2|S_1] - S_1|`` under ``Q_M`` as an exact rational."""
    M = _check_M(M)
    total = Fraction(0)
    for i in range(M):
        total += _abs_integral(block_conditional_mean(M, i), Fraction(i, M), Fraction(i + 1, M))
    return total


def a1_numeric(M: int) -> float:
    """Per-block integration of the drift; agrees with :func:`a1_closed_form`."""
    return float(a1_numeric_exact(M))


def payoff_expectation_offdiag(M: int) -> float:
    """``E_{Q_M}[1{S_1 != S_2}]``.

    ``Q_M`` has a density on ``[0, 1]^2`` and the diagonal is Lebesgue-null,
    so the value is exactly one for every ``M``.
    """
    _check_M(M)
    return 1.0


def sample_block(M: int, size: int, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(S_1, S_2)`` from ``Q_M``: ``S_1`` uniform, ``S_2`` uniform on the block of ``S_1``."""
    M = _check_M(M)
    rng = np.random.default_rng() if rng is None else rng
    x1 = rng.random(size)
    block = np.minimum(np.floor(x1 * M), M - 1)
    x2 = (block + rng.random(size)) / M
    return x1, x2


def diagonal_mass_mc(M: int, samples: int = 10**6, seed: int = 0) -> float:
    """Empirical ``Q_M(S_1 = S_2)`` from :func:`sample_block`."""
    x1, x2 = sample_block(M, samples, np.random.default_rng(seed))
    return float(np.mean(x1 == x2))


@dataclass(frozen=True)
class BlockMeasure:
    """Continuum block measure ``Q_M`` on ``[0, 1]^2``."""

    M: int

    def __post_init__(self):
        object.__setattr__(self, "M", _check_M(self.M))

    def density(self, x1, x2) -> np.ndarray:
        x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
        inside = (x1 >= 0) & (x1 < 1) & (x2 >= 0) & (x2 < 1)
        same = np.floor(x1 * self.M) == np.floor(x2 * self.M)
        return np.where(inside & same, float(self.M), 0.0)

    def marginal_density(self, x) -> np.ndarray:
        """Both marginals: each block row integrates to ``M * (1/M) = 1``."""
        x = np.asarray(x, dtype=float)
        return np.where((x >= 0) & (x < 1), 1.0, 0.0)

    def conditional_mean(self, x1) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        i = np.minimum(np.floor(x1 * self.M), self.M - 1)
        return (2 * i + 1) / (2 * self.M)

    def best_gain(self, N: float = 1.0) -> float:
        return N * a1_numeric(self.M)

    def expectation(self, phi: PayoffSpec) -> float:
        if phi.kind != "indicator_offdiagonal" or phi.truncation is not None:
            raise ValueError("closed form available only for the plain off-diagonal indicator")
        return payoff_expectation_offdiag(self.M)

    def sample(self, size: int, rng: np.random.Generator | None = None):
        return sample_block(self.M, size, rng)


# -- the constant superhedge ---------------------------------------------------


@dataclass(frozen=True)
class OptimizerReport:
    n_random: int
    grids: tuple
    min_slack: float
    diagonal_slack: float
    cost: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "n_random": self.n_random,
            "grids": list(self.grids),
            "min_slack": self.min_slack,
            "diagonal_slack": self.diagonal_slack,
            "cost": self.cost,
            "passed": self.passed,
        }


def _constant_hedge_slack(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    u1, u2, delta = 1.0, 0.0, 0.0
    wealth = u1 + u2 + delta * (x2 - x1)
    return wealth - (x1 != x2).astype(float)


def verify_paper_optimizer(samples: int = 10**6, grids: Sequence[int] = SUITE_GRIDS, seed: int = 0) -> OptimizerReport:
    """Check that ``(u_1, u_2, Delta) = (1, 0, 0)`` superhedges and costs one.

    Pointwise slack is evaluated on uniform random pairs, on diagonal points
    and on every product midpoint grid in ``grids``.  The cost is
    ``int 1 dmu_1 + int 0 dmu_2 = 1``.
    """
    rng = np.random.default_rng(seed)
    x1, x2 = rng.random(samples), rng.random(samples)
    slack = float(_constant_hedge_slack(x1, x2).min())
    diag = rng.random(1000)
    diag_slack = _constant_hedge_slack(diag, diag)
    for n in grids:
        pts = DiscreteMarginal.midpoint_grid(n).support
        g1, g2 = np.meshgrid(pts, pts, indexing="ij")
        slack = min(slack, float(_constant_hedge_slack(g1, g2).min()))
    cost = 1.0 * 1.0 + 0.0  # mu_1(u_1) + mu_2(u_2), both laws have mass one
    diagonal = float(diag_slack.min()) if np.all(diag_slack == diag_slack[0]) else math.nan
    return OptimizerReport(
        n_random=samples,
        grids=tuple(int(n) for n in grids),
        min_slack=slack,
        diagonal_slack=diagonal,
        cost=cost,
        passed=slack >= 0 and diagonal == 1.0 and cost == 1.0,
    )


# -- grid discretization -------------------------------------------------------


def discretize_block(M: int, n: int) -> GridCoupling:
    """``Q_M`` on the ``n``-point midpoint grid: mass ``M/n^2`` on each within-block pair."""
    M = _check_M(M)
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    if n % M:
        raise ValueError(f"M={M} does not divide n={n}")
    k = n // M
    blocks = np.arange(n) // k
    mass = (blocks[:, None] == blocks[None, :]).astype(float) * (M / (n * n))
    grid = DiscreteMarginal.midpoint_grid(n).support
    return GridCoupling((grid, grid), mass)


def gap_instance(n: int) -> Instance:
    """Identical uniform midpoint marginals with the off-diagonal indicator."""
    mu = DiscreteMarginal.midpoint_grid(n)
    return Instance([mu, mu], PayoffSpec.indicator_offdiagonal())


def block_lower_bound(n: int, N: float) -> tuple[float, int]:
    """``max_{M | n} E[Phi] - A^N`` over discretized block couplings, and the maximizing ``M``.

    Each discretized block coupling is feasible for the penalized primal, so
    this bounds ``P^N = D^N`` from below.
    """
    phi = PayoffSpec.indicator_offdiagonal()
    best, arg = -math.inf, 0
    for M in range(1, n + 1):
        if n % M == 0:
            v = penalized_value(discretize_block(M, n), phi, N)
            if v > best:
                best, arg = v, M
    return best, arg


@dataclass
class GapRow:
    n: int
    N: float
    P: float
    D: float
    D_N: float
    P_N: float
    lower_bound_certificate: float
    certificate_M: int


@dataclass
class GapTable:
    rows: list
    violations: list = field(default_factory=list)

    HEADER = ("n", "N", "P", "D", "D_N", "P_N", "lower_bound_certificate")

    def _values(self, r: GapRow):
        return (r.n, r.N, r.P, r.D, r.D_N, r.P_N, r.lower_bound_certificate)

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        for r in self.rows:
            v = self._values(r)
            lines.append(",".join([str(v[0])] + [format_number(x) for x in v[1:]]))
        return "\n".join(lines) + "\n"

    def to_gnuplot(self) -> str:
        """Whitespace-separated columns, one data block per ``n`` (use ``index`` in gnuplot)."""
        lines = ["# " + " ".join(self.HEADER)]
        prev = None
        for r in self.rows:
            if prev is not None and r.n != prev:
                lines += ["", ""]
            v = self._values(r)
            lines.append(" ".join([str(v[0])] + [format_number(x) for x in v[1:]]))
            prev = r.n
        return "\n".join(lines) + "\n"


def gap_experiment(n: int, Ns: Sequence[float], options: SolverOptions = DEFAULT_OPTIONS) -> GapTable:
    """Grid values ``P``, ``D`` and ``D^N``, ``P^N`` for each ``N`` at one resolution ``n``.

    Violations recorded: ``P`` or ``D`` away from zero, ``|D^N - P^N|`` above
    1e-6, ``D^N`` below the block certificate, ``D^N`` increasing in ``N``.
    """
    if isinstance(n, bool) or int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    Ns = [float(N) for N in Ns]
    if not Ns or any(b <= a for a, b in zip(Ns, Ns[1:])) or Ns[0] <= 0:
        raise ValueError("Ns must be positive and strictly increasing")
    inst = gap_instance(n)
    p_rep, d_rep = paired_unconstrained(inst, None, options)
    table = GapTable(rows=[])
    v = table.violations
    for name, rep in (("P", p_rep), ("D", d_rep)):
        if not rep.optimal:
            raise RuntimeError(f"{name} solve at n={n} ended with status {rep.status}")
        if abs(rep.value) > GAP_TOL:
            v.append(f"{name} = {rep.value:.3g} at n={n}, expected 0")

    def one(N):
        dn, pn = paired_prices(inst, None, N, options)
        for rep in (dn, pn):
            if not rep.optimal:
                raise RuntimeError(f"{rep.functional} solve at n={n}, N={N:g} ended with status {rep.status}")
        lb, M = block_lower_bound(n, N)
        return GapRow(n, N, p_rep.value, d_rep.value, dn.value, pn.value, lb, M)

    if options.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            table.rows = list(pool.map(one, Ns))
    else:
        table.rows = [one(N) for N in Ns]

    for r in table.rows:
        if abs(r.D_N - r.P_N) > CONSTRAINED_DUALITY_TOL:
            v.append(f"|D^N - P^N| = {abs(r.D_N - r.P_N):.3g} at n={n}, N={r.N:g}")
        if r.D_N < r.lower_bound_certificate - CONSTRAINED_DUALITY_TOL:
            v.append(f"D^N below the block certificate at n={n}, N={r.N:g}")
    for a, b in zip(table.rows, table.rows[1:]):
        if b.D_N > a.D_N + CONSTRAINED_DUALITY_TOL:
            v.append(f"D^N increased from N={a.N:g} to N={b.N:g} at n={n}")
    return table


def refinement_experiment(ns: Sequence[int], Ns: Sequence[float], options: SolverOptions = DEFAULT_OPTIONS) -> GapTable:
    """:func:`gap_experiment` over increasing ``ns``; also checks ``D^N`` is nondecreasing in ``n``."""
    ns = [int(n) for n in ns]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("ns must be strictly increasing")
    out = GapTable(rows=[])
    by_n = {}
    for n in ns:
        t = gap_experiment(n, Ns, options)
        out.rows += t.rows
        out.violations += t.violations
        by_n[n] = {r.N: r.D_N for r in t.rows}
    for a, b in zip(ns, ns[1:]):
        for N in by_n[a]:
            if by_n[b][N] < by_n[a][N] - CONSTRAINED_DUALITY_TOL:
                out.violations.append(f"D^N decreased from n={a} to n={b} at N={N:g}")
    return out
