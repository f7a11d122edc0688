"""Joint laws on product grids: marginals, drifts, trading gains, rho."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .marginals import DiscreteMarginal
from .payoff import MAX_CELLS, PayoffSpec, tabulate

MASS_TOL = 1e-10
PI_TOL = 1e-9
MARTINGALE_TOL = 1e-9


class CouplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridCoupling:
    """Nonnegative mass tensor over ``grids[0] x ... x grids[T-1]``."""

    grids: tuple
    mass: np.ndarray

    def __post_init__(self):
        grids = tuple(np.array(g, dtype=float).ravel() for g in self.grids)
        if len(grids) < 2:
            raise CouplingError("a coupling needs T >= 2")
        shape = tuple(g.size for g in grids)
        if int(np.prod(shape)) > MAX_CELLS:
            raise CouplingError(f"product grid {shape} exceeds {MAX_CELLS} cells")
        mass = np.array(self.mass, dtype=float)
        if mass.size != int(np.prod(shape)):
            raise CouplingError(f"mass has {mass.size} entries, grid has {int(np.prod(shape))}")
        mass = mass.reshape(shape)
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise CouplingError("mass must be finite and nonnegative")
        if abs(mass.sum() - 1.0) > MASS_TOL:
            raise CouplingError(f"total mass {mass.sum()!r} is not 1")
        for g in grids:
            g.flags.writeable = False
        mass.flags.writeable = False
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "mass", mass)

    @property
    def T(self) -> int:
        return len(self.grids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mass.shape

    @classmethod
    def product(cls, mus: Sequence[DiscreteMarginal]) -> "GridCoupling":
        mass = mus[0].weights
        for mu in mus[1:]:
            mass = np.multiply.outer(mass, mu.weights)
        return cls(tuple(mu.support for mu in mus), mass)

    @classmethod
    def diagonal(cls, mu: DiscreteMarginal, T: int = 2) -> "GridCoupling":
        n = len(mu)
        mass = np.zeros((n,) * T)
        idx = np.arange(n)
        mass[(idx,) * T] = mu.weights
        return cls((mu.support,) * T, mass)

    @classmethod
    def from_flat(cls, grids, flat, clip: float = 1e-9) -> "GridCoupling":
        """Build from an LP solution vector.

        Negative entries no larger than ``clip`` in magnitude are zeroed and
        the total renormalized, absorbing solver round-off.
        """
        q = np.asarray(flat, dtype=float).copy()
        if np.any(q < -clip):
            raise CouplingError(f"entry {q.min()!r} is negative beyond round-off")
        q = np.maximum(q, 0.0)
        return cls(grids, (q / q.sum()).reshape(tuple(len(g) for g in grids)))

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "grids": [g.tolist() for g in self.grids],
            "mass": self.mass.ravel().tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data) -> "GridCoupling":
        shape = tuple(data["shape"])
        grids = data["grids"]
        if tuple(len(g) for g in grids) != shape:
            raise CouplingError("grids do not match shape")
        return cls(grids, np.asarray(data["mass"], dtype=float).reshape(shape))

    @classmethod
    def from_json(cls, text: str) -> "GridCoupling":
        return cls.from_dict(json.loads(text))


def marginal_of(q: GridCoupling, t: int) -> DiscreteMarginal:
    """Law of ``S_t`` under ``q`` (``t`` is 1-based)."""
    if not 1 <= t <= q.T:
        raise CouplingError(f"time index {t} outside 1..{q.T}")
    axes = tuple(a for a in range(q.T) if a != t - 1)
    w = q.mass.sum(axis=axes)
    # renormalize away summation rounding so the result is a valid marginal
    return DiscreteMarginal(q.grids[t - 1], w / w.sum())


def _axis_sums(q: GridCoupling, t: int) -> np.ndarray:
    axes = tuple(a for a in range(q.T) if a != t - 1)
    return q.mass.sum(axis=axes)


def in_Pi(q: GridCoupling, mus: Sequence[DiscreteMarginal], tol: float = PI_TOL) -> tuple[bool, float]:
    """Whether every marginal of ``q`` matches ``mus``; returns ``(ok, worst deviation)``."""
    if len(mus) != q.T:
        raise CouplingError(f"{len(mus)} marginals for a T={q.T} coupling")
    worst = 0.0
    for t, mu in enumerate(mus, start=1):
        if not np.array_equal(mu.support, q.grids[t - 1]):
            raise CouplingError(f"grid mismatch at time {t}")
        worst = max(worst, float(np.abs(_axis_sums(q, t) - mu.weights).max()))
    return worst <= tol, worst


def drift_masses(q: GridCoupling, t: int) -> tuple[np.ndarray, np.ndarray]:
    """For histories ``h = (x_1..x_t)``: ``Q(h)`` and ``E_Q[(S_{t+1} - S_t) 1_h]``.

    Both arrays have shape ``(n_1, ..., n_t)``.
    """
    T = q.T
    joint = q.mass.sum(axis=tuple(range(t + 1, T))) if t + 1 < T else q.mass
    hist = joint.sum(axis=-1)
    forward = joint @ q.grids[t]
    x_t = q.grids[t - 1].reshape((1,) * (t - 1) + (-1,))
    return hist, forward - x_t * hist


@dataclass(frozen=True)
class DriftProfile:
    """Per time ``t`` (1-based key): ``{history index tuple: (Q(h), d_t(h))}``."""

    T: int
    drifts: dict

    def values(self, t: int) -> np.ndarray:
        return np.array([d for _, d in self.drifts[t].values()])


def drift_profile(q: GridCoupling) -> DriftProfile:
    out = {}
    for t in range(1, q.T):
        hist, dmass = drift_masses(q, t)
        entries = {}
        for idx in zip(*np.nonzero(hist > 0)):
            h = hist[idx]
            entries[tuple(int(i) for i in idx)] = (float(h), float(dmass[idx] / h))
        out[t] = entries
    return DriftProfile(T=q.T, drifts=out)


def best_gain(q: GridCoupling, N: float = 1.0) -> float:
    """``A^N_T(Q) = N sum_t sum_h Q(h) |d_t(h)|``.

    Each ``Delta_t`` is an arbitrary function of its own history bounded by
    ``N``, so the supremum separates over ``t`` and ``h`` and is attained by
    ``Delta_t(h) = N sgn d_t(h)``.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    total = 0.0
    for t in range(1, q.T):
        _, dmass = drift_masses(q, t)
        total += float(np.abs(dmass).sum())
    return N * total


def is_martingale(q: GridCoupling, tol: float = MARTINGALE_TOL) -> bool:
    return best_gain(q, 1.0) <= tol


def rho(q1: GridCoupling, q2: GridCoupling) -> float:
    """``|A^1(q1) - A^1(q2)|``: a pseudometric on couplings, a metric on its classes."""
    return abs(best_gain(q1, 1.0) - best_gain(q2, 1.0))


def expectation(q: GridCoupling, phi: PayoffSpec | np.ndarray) -> float:
    vals = phi if isinstance(phi, np.ndarray) else tabulate(phi, q.grids)
    return float((q.mass * vals).sum())


def penalized_value(q: GridCoupling, phi, N: float) -> float:
    """``E_Q[Phi] - A^N_T(Q)``."""
    return expectation(q, phi) - best_gain(q, N)
