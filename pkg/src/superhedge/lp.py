"""Dense linear programming core.

A two-phase tableau simplex over a computational standard form.  Free
variables are split, finite lower bounds shifted, upper bounds become extra
``<=`` rows.  Rows and columns are equilibrated with power-of-two factors
before phase 1, so scaling introduces no rounding.

Dual multipliers follow one convention for both senses: the optimal
objective equals ``b @ y`` plus the contribution of active variable bounds,
and the reduced costs are ``c - A.T @ y``.  For ``min`` problems ``ge`` rows
carry ``y >= 0`` and ``le`` rows ``y <= 0``; for ``max`` the signs flip.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
from scipy.linalg import blas as _blas

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

ROW_KINDS = ("eq", "le", "ge")


@dataclass(frozen=True)
class LinearProgram:
    """``sense  c @ x  s.t.  A[i] @ x (kind_i) b[i],  lower <= x <= upper``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    row_kinds: tuple[str, ...]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sense: str = "min"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2:
            raise ValueError("A must be two-dimensional")
        b = np.asarray(self.b, dtype=float).ravel()
        m = b.size
        if A.shape != (m, n):
            raise ValueError(f"A has shape {A.shape}, expected {(m, n)}")
        kinds = tuple(self.row_kinds)
        if len(kinds) != m:
            raise ValueError(f"{len(kinds)} row kinds for {m} rows")
        bad = set(kinds) - set(ROW_KINDS)
        if bad:
            raise ValueError(f"unknown row kinds {sorted(bad)}")
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if lower.size != n or upper.size != n:
            raise ValueError("bounds must have one entry per variable")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise ValueError("empty variable range")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("c, A and b must be finite")
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        for name, val in (("c", c), ("A", A), ("b", b), ("lower", lower), ("upper", upper)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "row_kinds", kinds)

    @property
    def n_rows(self) -> int:
        return self.b.size

    @property
    def n_cols(self) -> int:
        return self.c.size


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective: float
    y: np.ndarray
    iterations: int
    basis: tuple[int, ...] = ()
    phase1_iterations: int = 0
    bland_pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class CertificateReport:
    primal_residual: float
    dual_residual: float
    complementarity: float
    duality_gap: float
    primal_objective: float
    dual_objective: float
    details: dict = field(default_factory=dict)

    def ok(self, tol: float = 1e-8, gap_tol: float = 1e-7) -> bool:
        return (
            self.primal_residual <= tol
            and self.dual_residual <= tol
            and self.complementarity <= tol
            and self.duality_gap <= gap_tol
        )


def _pow2_scale(v):
    """Reciprocal power-of-two scale factors for positive magnitudes ``v``."""
    out = np.ones_like(v)
    pos = v > 0
    out[pos] = np.exp2(-np.round(np.log2(v[pos])))
    return out


class _StandardForm:
    """``min cs @ z  s.t.  M z = rhs,  z >= 0`` built from a LinearProgram."""

    def __init__(self, lp: LinearProgram):
        m, n = lp.A.shape
        sigma = 1.0 if lp.sense == "min" else -1.0
        cols = []  # (orig var, sign) for each structural internal column
        shift = np.zeros(n)
        ub_rows = []  # (internal col, width)
        for j in range(n):
            lo, hi = lp.lower[j], lp.upper[j]
            if np.isfinite(lo):
                shift[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    ub_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                shift[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        n_struct = len(cols)
        col_var = np.array([j for j, _ in cols], dtype=int)
        col_sign = np.array([s for _, s in cols])

        n_slack = sum(1 for k in lp.row_kinds if k != "eq") + len(ub_rows)
        n_rows = m + len(ub_rows)
        M = np.zeros((n_rows, n_struct + n_slack))
        M[:m, :n_struct] = lp.A[:, col_var] * col_sign
        rhs = np.empty(n_rows)
        rhs[:m] = lp.b - lp.A @ shift
        cs = np.zeros(n_struct + n_slack)
        cs[:n_struct] = sigma * lp.c[col_var] * col_sign
        k = n_struct
        for i, kind in enumerate(lp.row_kinds):
            if kind == "le":
                M[i, k] = 1.0
                k += 1
            elif kind == "ge":
                M[i, k] = -1.0
                k += 1
        for r, (col, width) in enumerate(ub_rows):
            M[m + r, col] = 1.0
            M[m + r, k] = 1.0
            rhs[m + r] = width
            k += 1

        flip = np.where(rhs < 0, -1.0, 1.0)
        M *= flip[:, None]
        rhs *= flip

        row_scale = _pow2_scale(np.abs(M).max(axis=1) if M.size else np.zeros(n_rows))
        M *= row_scale[:, None]
        rhs *= row_scale
        col_scale = _pow2_scale(np.abs(M).max(axis=0) if M.size else np.zeros(M.shape[1]))
        M *= col_scale[None, :]
        cs *= col_scale

        self.lp = lp
        self.sigma = sigma
        self.m_orig = m
        self.M = M
        self.rhs = rhs
        self.cs = cs
        self.flip = flip
        self.row_scale = row_scale
        self.col_scale = col_scale
        self.col_var = col_var
        self.col_sign = col_sign
        self.shift = shift
        self.n_struct = n_struct

    def to_original(self, z, w):
        """Map an internal primal point ``z`` and dual ``w`` back to the LP."""
        lp = self.lp
        zs = z * self.col_scale
        x = self.shift.copy()
        np.add.at(x, self.col_var, self.col_sign * zs[: self.n_struct])
        y_int = (w * self.row_scale * self.flip)[: self.m_orig]
        y = self.sigma * y_int
        return x, y


def solve(
    lp: LinearProgram,
    tol: float = 1e-9,
    max_iters: int | None = None,
    pivot_tol: float = 1e-10,
    bland_after: int | None = None,
    pricing: str = "steepest",
) -> LpSolution:
    """Solve ``lp`` with the two-phase simplex method.

    ``tol`` is the feasibility / optimality tolerance in the scaled space.
    ``pricing`` is ``"steepest"`` (reduced cost over tableau column norm) or
    ``"dantzig"`` (most negative reduced cost).  After ``bland_after``
    consecutive degenerate pivots (default ``5 * rows``) Bland's rule takes
    over until the next pivot that makes progress.
    """
    if pricing not in ("steepest", "dantzig"):
        raise ValueError(f"unknown pricing rule {pricing!r}")
    sf = _StandardForm(lp)
    M, rhs = sf.M, sf.rhs
    m, n = M.shape
    if max_iters is None:
        max_iters = 50 * (lp.n_rows + lp.n_cols) + 50
    if bland_after is None:
        bland_after = 5 * max(m, 1)

    # initial basis: +1 slack columns where available, artificials elsewhere
    basis = np.full(m, -1, dtype=int)
    single = np.count_nonzero(M, axis=0) == 1
    for j in range(sf.n_struct, n):
        if single[j]:
            i = int(np.nonzero(M[:, j])[0][0])
            if M[i, j] == 1.0 and basis[i] < 0:
                basis[i] = j
    art_rows = np.nonzero(basis < 0)[0]
    n_art = art_rows.size
    width = n + n_art
    # original rows [M | artificials | rhs], kept for reinversion
    T0 = np.zeros((m, width + 1))
    T0[:, :n] = M
    T0[:, -1] = rhs
    for a, i in enumerate(art_rows):
        T0[i, n + a] = 1.0
        basis[i] = n + a
    tab = _Tableau(T0, basis, tol, pivot_tol)

    state = {"iters": 0, "bland": 0}

    def run_phase(allowed):
        degenerate = 0
        use_bland = False
        since_reinvert = 0
        while True:
            if since_reinvert >= REINVERT_EVERY:
                tab.reinvert()
                since_reinvert = 0
            d = tab.T[-1, :width]
            cand = allowed & (d < -tol)
            if not cand.any():
                if since_reinvert:
                    # confirm optimality on freshly computed reduced costs
                    tab.reinvert()
                    since_reinvert = 0
                    continue
                return OPTIMAL
            if state["iters"] >= max_iters:
                return ITERATION_LIMIT
            if use_bland:
                k = int(np.argmax(cand))
            elif pricing == "steepest":
                norms = np.sqrt(1.0 + np.einsum("ij,ij->j", tab.T[:-1, :width], tab.T[:-1, :width]))
                k = int(np.argmin(np.where(cand, d / norms, 0.0)))
            else:
                k = int(np.argmin(np.where(cand, d, 0.0)))
            r, theta = tab.ratio_test(k, use_bland)
            if r < 0:
                return UNBOUNDED
            tab.pivot(r, k)
            state["iters"] += 1
            since_reinvert += 1
            if use_bland:
                state["bland"] += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= bland_after:
                    use_bland = True
            else:
                degenerate = 0
                use_bland = False

    allowed = np.ones(width, dtype=bool)
    if n_art:
        cost1 = np.zeros(width)
        cost1[n:] = 1.0
        tab.set_cost(cost1)
        status = run_phase(allowed)
        if status == ITERATION_LIMIT:
            return _failure(lp, ITERATION_LIMIT, state)
        tab.reinvert()
        infeas = tab.T[:-1, -1][tab.basis >= n].sum()
        if infeas > tol * max(1.0, np.abs(rhs).max(initial=0.0)):
            return _failure(lp, INFEASIBLE, state)
        tab.drop_artificials(n)
        allowed[n:] = False
    phase1_iters = state["iters"]

    cost2 = np.zeros(width)
    cost2[:n] = sf.cs
    tab.set_cost(cost2)
    status = run_phase(allowed)
    basis = tab.basis
    if status != OPTIMAL:
        sol = _failure(lp, status, state)
        if status == UNBOUNDED:
            z = np.zeros(n)
            struct = basis < n
            z[basis[struct]] = tab.T[: tab.m, -1][struct]
            sol.x, _ = sf.to_original(z, np.zeros(sf.M.shape[0]))
        return sol

    z, w = _polish(sf, basis, tab.T, tab.m, n)
    x, y = sf.to_original(z, w)
    return LpSolution(
        status=OPTIMAL,
        x=x,
        objective=float(lp.c @ x),
        y=y,
        iterations=state["iters"],
        basis=tuple(int(j) for j in sorted(basis[basis < n])),
        phase1_iterations=phase1_iters,
        bland_pivots=state["bland"],
    )


REINVERT_EVERY = 100
# smallest element accepted when pivoting an artificial out after phase 1
DROP_PIVOT_TOL = 1e-7


class _Tableau:
    """Dense simplex tableau; the last row holds reduced costs and ``-objective``."""

    def __init__(self, T0, basis, tol, pivot_tol):
        self.T0 = T0
        self.basis = basis
        self.tol = tol
        self.pivot_tol = pivot_tol
        self.m = T0.shape[0]
        self.cost = np.zeros(T0.shape[1] - 1)
        self.T = np.asfortranarray(np.vstack([T0, np.zeros((1, T0.shape[1]))]))

    def set_cost(self, cost):
        self.cost = cost
        self._price()

    def _price(self):
        T, m = self.T, self.m
        T[-1, :-1] = self.cost
        T[-1, -1] = 0.0
        T[-1] -= self.cost[self.basis] @ T[:m]
        T[-1, self.basis] = 0.0

    def reinvert(self):
        """Recompute ``B^{-1} [A | b]`` from the original rows."""
        B = self.T0[:, self.basis]
        try:
            self.T[: self.m] = np.linalg.solve(B, self.T0)
        except np.linalg.LinAlgError:  # pragma: no cover - keep the updated tableau
            return
        self.T[: self.m, self.basis] = np.eye(self.m)
        rhs = self.T[: self.m, -1]
        rhs[(rhs < 0) & (rhs > -self.tol)] = 0.0
        self._price()

    def ratio_test(self, k, bland):
        """Harris two-pass ratio test; returns ``(row, step)`` or ``(-1, inf)``."""
        m = self.m
        col = self.T[:m, k]
        rhs = np.maximum(self.T[:m, -1], 0.0)
        pos = col > self.pivot_tol
        if not pos.any():
            return -1, np.inf
        idx = np.nonzero(pos)[0]
        c = col[idx]
        ratios = rhs[idx] / c
        if bland:
            theta = ratios.min()
            ties = idx[ratios <= theta + 1e-12 * (1.0 + theta)]
            r = int(ties[np.argmin(self.basis[ties])])
            return r, theta
        bound = ((rhs[idx] + self.tol) / c).min()
        near = ratios <= bound
        r = int(idx[near][np.argmax(c[near])])
        return r, rhs[r] / col[r]

    def pivot(self, r, k):
        T = self.T
        row = T[r] / T[r, k]
        col = T[:, k].copy()
        col[r] = 0.0
        out = _blas.dger(-1.0, col, row, a=T, overwrite_a=1)
        if out is not T:  # pragma: no cover - dger copied
            T[...] = out
        T[r] = row
        T[:, k] = 0.0
        T[r, k] = 1.0
        rhs = T[: self.m, -1]
        rhs[(rhs < 0) & (rhs > -self.tol)] = 0.0
        self.basis[r] = k

    def drop_artificials(self, n):
        """Pivot zero-level basic artificials out where a usable pivot exists.

        An artificial whose tableau row has no structural entry above
        ``DROP_PIVOT_TOL`` sits in a redundant row; it stays basic at zero and
        never moves, since no structural column can pivot on that row.
        """
        for i in range(self.m):
            if self.basis[i] >= n:
                row = np.abs(self.T[i, :n])
                j = int(np.argmax(row))
                if row[j] > DROP_PIVOT_TOL:
                    self.T[i, -1] = 0.0  # phase 1 left it at zero up to round-off
                    self.pivot(i, j)
        self.reinvert()

    def redundant_rows(self, n) -> np.ndarray:
        return np.nonzero(self.basis >= n)[0]


def _polish(sf, basis, T, m, n):
    """Recompute the basic solution and duals from the scaled data.

    Artificials still basic after phase 1 mark redundant rows; the structural
    basis is then tall but consistent, and least squares recovers the exact
    basic solution.  Duals are unique up to the row dependencies, which do
    not change reduced costs or ``b @ y``.
    """
    M = sf.M
    z = np.zeros(M.shape[1])
    struct = basis < n
    cols = basis[struct]
    B = M[:, cols]
    tab_vals = T[:m, -1][struct]
    try:
        zb, *_ = np.linalg.lstsq(B, sf.rhs, rcond=None)
        w, *_ = np.linalg.lstsq(B.T, sf.cs[cols], rcond=None)
    except np.linalg.LinAlgError:  # pragma: no cover
        zb, w = tab_vals, np.zeros(M.shape[0])
    # fall back to tableau values where the refit is worse
    if np.abs(B @ zb - sf.rhs).max(initial=0.0) > np.abs(B @ tab_vals - sf.rhs).max(initial=0.0):
        zb = tab_vals
    z[cols] = np.maximum(zb, 0.0)
    return z, w


def _failure(lp, status, state):
    return LpSolution(
        status=status,
        x=np.full(lp.n_cols, np.nan),
        objective=math.nan,
        y=np.full(lp.n_rows, np.nan),
        iterations=state["iters"],
        bland_pivots=state["bland"],
    )


def reduced_costs(lp: LinearProgram, y) -> np.ndarray:
    return lp.c - lp.A.T @ np.asarray(y, dtype=float)


def dual_objective(lp: LinearProgram, y, z=None) -> float:
    """``b @ y`` plus the bound terms selected by the reduced-cost signs."""
    y = np.asarray(y, dtype=float)
    if z is None:
        z = reduced_costs(lp, y)
    total = float(lp.b @ y)
    lower_side = z > 0 if lp.sense == "min" else z < 0
    bnd = np.where(lower_side, lp.lower, lp.upper)
    finite = np.isfinite(bnd) & (z != 0)
    return total + float(z[finite] @ bnd[finite])


def check_certificate(lp: LinearProgram, sol: LpSolution) -> CertificateReport:
    """Recompute primal, dual, complementarity and gap residuals from scratch.

    Nothing from the solver is used except ``sol.x`` and ``sol.y``.  Row
    residuals are divided by ``max(1, ||A_i||_inf)``.
    """
    x = np.asarray(sol.x, dtype=float)
    y = np.asarray(sol.y, dtype=float)
    A, b = lp.A, lp.b
    kinds = np.array(lp.row_kinds)
    norms = np.maximum(1.0, np.abs(A).max(axis=1)) if A.size else np.ones(b.size)
    ax = A @ x
    slack = (ax - b) / norms
    viol = np.zeros(b.size)
    viol[kinds == "eq"] = np.abs(slack[kinds == "eq"])
    viol[kinds == "le"] = np.maximum(slack[kinds == "le"], 0.0)
    viol[kinds == "ge"] = np.maximum(-slack[kinds == "ge"], 0.0)
    bviol = np.maximum(np.maximum(lp.lower - x, x - lp.upper), 0.0)
    primal = float(max(viol.max(initial=0.0), bviol.max(initial=0.0)))

    s = 1.0 if lp.sense == "min" else -1.0
    ys = s * y  # multipliers of the equivalent min problem
    zs = s * reduced_costs(lp, y)
    dviol = np.zeros(b.size)
    dviol[kinds == "ge"] = np.maximum(-ys[kinds == "ge"], 0.0)
    dviol[kinds == "le"] = np.maximum(ys[kinds == "le"], 0.0)
    zviol = np.zeros(lp.n_cols)
    no_lo = ~np.isfinite(lp.lower)
    no_hi = ~np.isfinite(lp.upper)
    zviol[no_lo] = np.maximum(zviol[no_lo], zs[no_lo])
    zviol[no_hi] = np.maximum(zviol[no_hi], -zs[no_hi])
    dual = float(max(dviol.max(initial=0.0), zviol.max(initial=0.0)))

    row_cs = np.abs(ys * (ax - b))
    row_cs[kinds == "eq"] = 0.0
    zpos, zneg = np.maximum(zs, 0.0), np.maximum(-zs, 0.0)
    with np.errstate(invalid="ignore"):
        gap_lo = np.where(np.isfinite(lp.lower), x - lp.lower, 0.0)
        gap_hi = np.where(np.isfinite(lp.upper), lp.upper - x, 0.0)
    col_cs = np.maximum(np.abs(zpos * gap_lo), np.abs(zneg * gap_hi))
    comp = float(max(row_cs.max(initial=0.0), col_cs.max(initial=0.0)))

    pobj = float(lp.c @ x)
    dobj = dual_objective(lp, y)
    return CertificateReport(
        primal_residual=primal,
        dual_residual=dual,
        complementarity=comp,
        duality_gap=abs(pobj - dobj),
        primal_objective=pobj,
        dual_objective=dobj,
    )


# -- text dump ---------------------------------------------------------------
#
#   superhedge-lp 1
#   sense <min|max>
#   shape <rows> <cols>
#   c <v_0> ... <v_{n-1}>
#   lower <v_0> ... ; upper <v_0> ...        (inf / -inf allowed)
#   row <kind> <rhs> <j>:<a_j> ...            (nonzeros only, one per row)
#   end
#
# Numbers are written with 17 significant digits, so a dump re-reads to the
# identical LP.


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(float(v), ".17g")


def dump_lp(lp: LinearProgram, out: TextIO | None = None) -> str:
    buf = io.StringIO()
    buf.write("superhedge-lp 1\n")
    buf.write(f"sense {lp.sense}\n")
    buf.write(f"shape {lp.n_rows} {lp.n_cols}\n")
    buf.write("c " + " ".join(_fmt(v) for v in lp.c) + "\n")
    buf.write("lower " + " ".join(_fmt(v) for v in lp.lower) + "\n")
    buf.write("upper " + " ".join(_fmt(v) for v in lp.upper) + "\n")
    for i in range(lp.n_rows):
        nz = np.nonzero(lp.A[i])[0]
        terms = " ".join(f"{j}:{_fmt(lp.A[i, j])}" for j in nz)
        buf.write(f"row {lp.row_kinds[i]} {_fmt(lp.b[i])} {terms}".rstrip() + "\n")
    buf.write("end\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def load_lp(text: str) -> LinearProgram:
    lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    if lines[0] != ["superhedge-lp", "1"] or lines[-1] != ["end"]:
        raise ValueError("not a superhedge-lp dump")
    fields = {}
    rows = []
    for parts in lines[1:-1]:
        key = parts[0]
        if key == "row":
            rows.append(parts[1:])
        else:
            fields[key] = parts[1:]
    m, n = int(fields["shape"][0]), int(fields["shape"][1])
    A = np.zeros((m, n))
    b = np.zeros(m)
    kinds = []
    for i, parts in enumerate(rows):
        kinds.append(parts[0])
        b[i] = float(parts[1])
        for term in parts[2:]:
            j, a = term.split(":")
            A[i, int(j)] = float(a)
    return LinearProgram(
        c=np.array([float(v) for v in fields["c"]]),
        A=A,
        b=b,
        row_kinds=tuple(kinds),
        lower=np.array([float(v) for v in fields["lower"]]),
        upper=np.array([float(v) for v in fields["upper"]]),
        sense=fields["sense"][0],
    )


def from_rows(
    c: Sequence[float],
    rows: Sequence[tuple[Sequence[float], str, float]],
    sense: str = "min",
    lower=None,
    upper=None,
) -> LinearProgram:
    """Convenience constructor from ``(coefficients, kind, rhs)`` triples."""
    c = np.asarray(c, dtype=float)
    A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), c.size)
    return LinearProgram(
        c=c,
        A=A,
        b=np.array([r[2] for r in rows], dtype=float),
        row_kinds=tuple(r[1] for r in rows),
        lower=lower,
        upper=upper,
        sense=sense,
    )
