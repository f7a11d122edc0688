"""Path payoffs on product grids, growth constants and truncation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .marginals import DiscreteMarginal, tail_mass, tail_moment

KINDS = ("indicator_offdiagonal", "basket_call", "lookback", "forward_start", "table")

# product grid ceiling shared with the coupling tensors
MAX_CELLS = 10**6


class PayoffError(ValueError):
    pass


def _freeze_grids(grids):
    if grids is None:
        return None
    out = []
    for g in grids:
        a = np.array(g, dtype=float).ravel()
        a.flags.writeable = False
        out.append(a)
    return tuple(out)


def grid_shape(grids) -> tuple[int, ...]:
    shape = tuple(len(g) for g in grids)
    if int(np.prod(shape)) > MAX_CELLS:
        raise PayoffError(f"product grid {shape} exceeds {MAX_CELLS} cells")
    return shape


def grids_of(mus: Sequence[DiscreteMarginal]):
    return tuple(mu.support for mu in mus)


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """A payoff ``Phi`` on ``R_+^T``.

    Builtin kinds (``x`` is the path, ``T`` its length):

    * ``indicator_offdiagonal``: ``1{x_1 != x_2}``
    * ``basket_call``: ``(x_1 + ... + x_T - strike)^+``
    * ``lookback``: ``max_t x_t - x_T``
    * ``forward_start``: ``(x_T - strike * x_1)^+``, strike as moneyness
    * ``table``: explicit values on a product grid, row-major with ``x_1``
      varying slowest.

    ``truncation`` set to ``n`` zeroes the payoff wherever some coordinate
    exceeds ``n``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    table: np.ndarray | None = None
    grids: tuple | None = None
    truncation: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PayoffError(f"unknown payoff kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "grids", _freeze_grids(self.grids))
        if self.kind in ("basket_call", "forward_start"):
            if "strike" not in self.params:
                raise PayoffError(f"{self.kind} needs a 'strike' parameter")
            object.__setattr__(self, "params", {"strike": float(self.params["strike"])})
        if self.kind == "table":
            if self.table is None or self.grids is None:
                raise PayoffError("table payoff needs values and grids")
            shape = grid_shape(self.grids)
            tab = np.array(self.table, dtype=float)
            if tab.size != int(np.prod(shape)):
                raise PayoffError(f"table has {tab.size} values, grid has {int(np.prod(shape))} cells")
            tab = tab.reshape(shape)
            if not np.all(np.isfinite(tab)):
                raise PayoffError("table contains non-finite values")
            tab.flags.writeable = False
            object.__setattr__(self, "table", tab)
        if self.truncation is not None and not self.truncation > 0:
            raise PayoffError("truncation level must be positive")

    # constructors
    @classmethod
    def indicator_offdiagonal(cls):
        return cls("indicator_offdiagonal")

    @classmethod
    def basket_call(cls, strike: float):
        return cls("basket_call", {"strike": strike})

    @classmethod
    def lookback(cls):
        return cls("lookback")

    @classmethod
    def forward_start(cls, strike: float):
        return cls("forward_start", {"strike": strike})

    @classmethod
    def from_table(cls, values, grids):
        return cls("table", table=values, grids=grids)

    @classmethod
    def constant(cls, value: float, grids):
        return cls.from_table(np.full(grid_shape(grids), float(value)), grids)

    def to_dict(self) -> dict:
        if self.kind == "table":
            out = {"kind": "table", "values": self.table.ravel().tolist()}
        else:
            out = {"kind": self.kind, "params": dict(self.params)}
        if self.truncation is not None:
            out["truncation"] = self.truncation
        return out


def payoff_from_json(block, grids=None) -> PayoffSpec:
    if not isinstance(block, dict) or "kind" not in block:
        raise PayoffError("payoff: expected an object with a 'kind' field")
    kind = block["kind"]
    if kind not in KINDS:
        raise PayoffError(f"payoff.kind: unknown kind {kind!r}")
    trunc = block.get("truncation")
    if kind == "table":
        if "values" not in block:
            raise PayoffError("payoff.values: missing")
        if grids is None:
            raise PayoffError("payoff: table payoffs need the instance grid")
        return PayoffSpec("table", table=np.asarray(block["values"], dtype=float), grids=grids, truncation=trunc)
    params = block.get("params", {})
    if not isinstance(params, dict):
        raise PayoffError("payoff.params: expected an object")
    return PayoffSpec(kind, params=params, truncation=trunc)


def _raw_value(phi: PayoffSpec, x: np.ndarray) -> float:
    k = phi.kind
    if k == "indicator_offdiagonal":
        return 1.0 if x[0] != x[1] else 0.0
    if k == "basket_call":
        return max(float(x.sum()) - phi.params["strike"], 0.0)
    if k == "lookback":
        return float(x.max() - x[-1])
    if k == "forward_start":
        return max(float(x[-1] - phi.params["strike"] * x[0]), 0.0)
    idx = []
    for t, (g, v) in enumerate(zip(phi.grids, x)):
        hit = np.nonzero(g == v)[0]
        if hit.size == 0:
            raise PayoffError(f"coordinate {t + 1} value {v!r} is not on the payoff grid")
        idx.append(int(hit[0]))
    return float(phi.table[tuple(idx)])


def evaluate(phi: PayoffSpec, path) -> float:
    x = np.asarray(path, dtype=float).ravel()
    if np.any(x < 0):
        raise PayoffError("paths live in the nonnegative orthant")
    if phi.kind == "indicator_offdiagonal" and x.size < 2:
        raise PayoffError("indicator_offdiagonal needs T >= 2")
    if phi.kind == "table" and x.size != len(phi.grids):
        raise PayoffError(f"path has length {x.size}, table has T={len(phi.grids)}")
    if phi.truncation is not None and np.any(x > phi.truncation):
        return 0.0
    return _raw_value(phi, x)


def tabulate(phi: PayoffSpec, grids) -> np.ndarray:
    """Dense values of ``phi`` on the product of ``grids`` (``x_1`` slowest)."""
    grids = _freeze_grids(grids)
    shape = grid_shape(grids)
    T = len(grids)
    mesh = np.meshgrid(*grids, indexing="ij")
    k = phi.kind
    if k == "indicator_offdiagonal":
        if T < 2:
            raise PayoffError("indicator_offdiagonal needs T >= 2")
        if np.array_equal(grids[0], grids[1]):
            i1, i2 = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
            off = (i1 != i2).astype(float)
            vals = np.broadcast_to(off.reshape(off.shape + (1,) * (T - 2)), shape).copy()
        else:
            vals = (mesh[0] != mesh[1]).astype(float)
    elif k == "basket_call":
        vals = np.maximum(sum(mesh) - phi.params["strike"], 0.0)
    elif k == "lookback":
        vals = np.max(np.stack(mesh), axis=0) - mesh[-1]
    elif k == "forward_start":
        vals = np.maximum(mesh[-1] - phi.params["strike"] * mesh[0], 0.0)
    else:
        if len(phi.grids) != T or any(not np.array_equal(a, b) for a, b in zip(phi.grids, grids)):
            raise PayoffError("table payoff grid does not match the instance grid")
        vals = np.array(phi.table, dtype=float)
    if phi.truncation is not None:
        inside = np.ones(shape, dtype=bool)
        for m in mesh:
            inside &= m <= phi.truncation
        vals = np.where(inside, vals, 0.0)
    if not np.all(np.isfinite(vals)):
        raise PayoffError("payoff produced non-finite values")
    return vals


@dataclass(frozen=True)
class GrowthBound:
    K: float
    satisfied_at: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"K": self.K, "satisfied_at": list(self.satisfied_at)}


def growth_constant(phi: PayoffSpec, grids) -> GrowthBound:
    """Smallest ``K`` with ``|Phi(x)| <= K (1 + x_1 + ... + x_T)`` on the grid."""
    vals = tabulate(phi, grids)
    mesh = np.meshgrid(*grids, indexing="ij")
    ratio = np.abs(vals) / (1.0 + sum(mesh))
    flat = int(np.argmax(ratio))
    idx = np.unravel_index(flat, ratio.shape)
    path = tuple(float(g[i]) for g, i in zip(grids, idx))
    return GrowthBound(K=float(ratio.max()), satisfied_at=path)


def truncate(phi: PayoffSpec, n: float) -> PayoffSpec:
    """``Phi_n(x) = Phi(x) 1{max_t x_t <= n}``."""
    if not n > 0:
        raise PayoffError("truncation level must be positive")
    level = n if phi.truncation is None else min(n, phi.truncation)
    return replace(phi, truncation=float(level))


def truncation_error_bound(mus: Sequence[DiscreteMarginal], K: float, n: float) -> float:
    """Upper bound on ``|E_Q[Phi] - E_Q[Phi_n]|`` valid for every coupling of ``mus``.

    ``K (sum_t mu_t((n, inf)) + T sum_t int_{y > n} y dmu_t)``, which is at
    most ``K (T + T^2) delta`` once both tail quantities are below ``delta``.
    """
    T = len(mus)
    masses = sum(tail_mass(mu, n) for mu in mus)
    moments = sum(tail_moment(mu, n) for mu in mus)
    return K * (masses + T * moments)


def truncation_level(mus: Sequence[DiscreteMarginal], K: float, eps: float) -> float:
    """Smallest support-point level ``n`` with every tail mass and tail moment below ``eps / (K (T + T^2))``."""
    T = len(mus)
    if K == 0:
        return float(max(mu.support[-1] for mu in mus))
    delta = eps / (K * (T + T * T))
    for n in np.unique(np.concatenate([mu.support for mu in mus])):
        if n <= 0:
            continue
        if all(tail_mass(mu, n) < delta and tail_moment(mu, n) < delta for mu in mus):
            return float(n)
    return float(max(mu.support[-1] for mu in mus))


def add_static(phi: PayoffSpec, grids, legs) -> PayoffSpec:
    """Table payoff ``Phi + sum_t v_t(x_t)`` for per-axis value vectors ``legs``."""
    vals = tabulate(phi, grids).copy()
    T = len(grids)
    for t, v in enumerate(legs):
        v = np.asarray(v, dtype=float)
        shape = [1] * T
        shape[t] = v.size
        vals += v.reshape(shape)
    return PayoffSpec.from_table(vals, grids)
