"""Discrete marginal laws, call functions and convex-order diagnostics."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
ORDER_TOL = 1e-9


class MarginalError(ValueError):
    """Raised for marginal data that violates a DiscreteMarginal invariant."""


@dataclass(frozen=True, eq=False)
class DiscreteMarginal:
    """Probability law on finitely many nonnegative prices.

    ``support`` is strictly increasing; ``weights`` sum to one.  Zero weights
    are kept so that a user-supplied grid survives into the pricing LPs.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.array(self.support, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if s.size == 0:
            raise MarginalError("empty support")
        if s.size != w.size:
            raise MarginalError(f"support has {s.size} points but {w.size} weights")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(w))):
            raise MarginalError("non-finite support or weight")
        if np.any(s < 0):
            raise MarginalError("negative support point")
        if np.any(np.diff(s) <= 0):
            raise MarginalError("support must be strictly increasing")
        if np.any(w < 0) or np.any(w > 1):
            raise MarginalError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise MarginalError(f"weights sum to {w.sum()!r}, not 1")
        s.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, support, weights, renormalize_tol: float = RENORMALIZE_TOL):
        """Canonicalize raw data: sort, merge duplicates, renormalize slightly.

        Returns ``(marginal, warnings)``.
        """
        s = np.asarray(support, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if s.size != w.size:
            raise MarginalError(f"support has {s.size} points but {w.size} weights")
        if s.size == 0:
            raise MarginalError("empty support")
        if np.any(w < 0):
            raise MarginalError("negative weight")
        if np.any(s < 0):
            raise MarginalError("negative support point")
        warnings = []
        uniq, inv = np.unique(s, return_inverse=True)
        if uniq.size < s.size:
            merged = np.zeros(uniq.size)
            np.add.at(merged, inv, w)
            warnings.append(f"merged {s.size - uniq.size} duplicate support point(s)")
            s, w = uniq, merged
        elif np.any(np.diff(s) <= 0):
            order = np.argsort(s)
            s, w = s[order], w[order]
        total = w.sum()
        if abs(total - 1.0) > renormalize_tol:
            raise MarginalError(f"weights sum to {total!r}; deviation exceeds {renormalize_tol:g}")
        if total != 1.0:
            w = w / total
        for msg in warnings:
            log.warning(msg)
        return cls(s, w), warnings

    @classmethod
    def dirac(cls, x: float) -> "DiscreteMarginal":
        return cls([x], [1.0])

    @classmethod
    def uniform(cls, points) -> "DiscreteMarginal":
        pts = np.asarray(points, dtype=float)
        return cls(pts, np.full(pts.size, 1.0 / pts.size))

    @classmethod
    def midpoint_grid(cls, n: int) -> "DiscreteMarginal":
        """Uniform law on ``{(2j - 1) / (2n)}``, the midpoint discretization of Lebesgue on [0, 1]."""
        return cls.uniform((2 * np.arange(1, n + 1) - 1) / (2 * n))

    def __len__(self):
        return self.support.size

    def __eq__(self, other):
        if not isinstance(other, DiscreteMarginal):
            return NotImplemented
        return np.array_equal(self.support, other.support) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.support.tobytes(), self.weights.tobytes()))

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}


def mean(mu: DiscreteMarginal) -> float:
    return float(mu.weights @ mu.support)


def call_price(mu: DiscreteMarginal, strike) -> float | np.ndarray:
    """``E[(S - K)^+]`` under ``mu``; vectorized over ``strike``."""
    k = np.asarray(strike, dtype=float)
    if np.any(k < 0):
        raise ValueError("strike must be nonnegative")
    vals = np.maximum(mu.support[None, :] - k.reshape(-1, 1), 0.0) @ mu.weights
    return float(vals[0]) if k.ndim == 0 else vals.reshape(k.shape)


def tail_mass(mu: DiscreteMarginal, level: float) -> float:
    """``mu((level, inf))``."""
    return float(mu.weights[mu.support > level].sum())


def tail_moment(mu: DiscreteMarginal, level: float) -> float:
    """``int_{y > level} y dmu(y)``."""
    sel = mu.support > level
    return float(mu.weights[sel] @ mu.support[sel])


@dataclass(frozen=True)
class ConvexOrderReport:
    same_mean: bool
    ordered: bool
    common_mean: float | None
    worst_violation: tuple[int, float, float] | None
    tol: float = ORDER_TOL

    @property
    def feasible(self) -> bool:
        """Strassen's condition: equal means and increasing convex order."""
        return self.same_mean and self.ordered

    def to_dict(self) -> dict:
        return {
            "same_mean": self.same_mean,
            "ordered": self.ordered,
            "common_mean": self.common_mean,
            "worst_violation": None
            if self.worst_violation is None
            else {"t": self.worst_violation[0], "strike": self.worst_violation[1], "excess": self.worst_violation[2]},
            "tol": self.tol,
        }


def check_convex_order(mus: Sequence[DiscreteMarginal], tol: float = ORDER_TOL) -> ConvexOrderReport:
    """Check ``mu_1 <=_c ... <=_c mu_T`` through call prices.

    Call functions are piecewise linear with kinks at support points, so the
    difference ``C_t - C_{t+1}`` attains its maximum over ``K >= 0`` at a
    support point of either law (or at ``K = 0``, where it is the mean
    difference).  Checking those strikes is exact.

    ``worst_violation`` is ``(t, K, C_t(K) - C_{t+1}(K))`` with ``t`` 1-based,
    at the strike maximizing the excess over all consecutive pairs.
    """
    if len(mus) < 2:
        raise ValueError("need at least two marginals")
    means = np.array([mean(mu) for mu in mus])
    same_mean = bool(np.all(np.abs(means - means[0]) <= tol))
    worst = None
    for t in range(len(mus) - 1):
        a, b = mus[t], mus[t + 1]
        strikes = np.union1d(np.union1d(a.support, b.support), [0.0])
        diff = call_price(a, strikes) - call_price(b, strikes)
        i = int(np.argmax(diff))
        if worst is None or diff[i] > worst[2]:
            worst = (t + 1, float(strikes[i]), float(diff[i]))
    ordered = worst[2] <= tol
    return ConvexOrderReport(
        same_mean=same_mean,
        ordered=bool(ordered),
        common_mean=float(means.mean()) if same_mean else None,
        worst_violation=worst,
        tol=tol,
    )


# -- ingestion -----------------------------------------------------------------


def _parse_float(text, where):
    try:
        v = float(text)
    except ValueError:
        raise MarginalError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise MarginalError(f"{where}: non-finite value {text!r}")
    return v


def read_csv_marginal(path) -> DiscreteMarginal:
    support, weights = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if len(cells) != 2:
                raise MarginalError(f"{path}:{lineno}: expected 2 columns, got {len(cells)}")
            if lineno == 1 and cells[0].lower() == "support":
                continue
            support.append(_parse_float(cells[0], f"{path}:{lineno}"))
            weights.append(_parse_float(cells[1], f"{path}:{lineno}"))
    mu, _ = DiscreteMarginal.from_points(support, weights)
    return mu


def marginal_from_json(entry, base_dir: Path | None = None, where: str = "marginals") -> DiscreteMarginal:
    if not isinstance(entry, dict):
        raise MarginalError(f"{where}: expected an object")
    if "file" in entry:
        ref = Path(entry["file"])
        if base_dir is not None and not ref.is_absolute():
            ref = base_dir / ref
        if not ref.exists():
            raise MarginalError(f"{where}.file: {ref} does not exist")
        return read_csv_marginal(ref)
    for key in ("support", "weights"):
        if key not in entry or not isinstance(entry[key], list):
            raise MarginalError(f"{where}.{key}: missing or not a list")
    support = [_parse_float(v, f"{where}.support") for v in entry["support"]]
    weights = [_parse_float(v, f"{where}.weights") for v in entry["weights"]]
    mu, _ = DiscreteMarginal.from_points(support, weights)
    return mu


def load_marginals(path, format: str | None = None) -> list[DiscreteMarginal]:
    """Read marginals from a CSV file (one law) or a JSON instance / list.

    ``format`` defaults to the file suffix.  Weights whose sum is off by at
    most 1e-9 are renormalized; anything larger is an error.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        return [read_csv_marginal(path)]
    if fmt == "json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MarginalError(f"{path}: invalid JSON ({exc})") from None
        entries = data.get("marginals") if isinstance(data, dict) else data
        if not isinstance(entries, list):
            raise MarginalError(f"{path}: no 'marginals' list")
        return [marginal_from_json(e, path.parent, f"marginals[{i}]") for i, e in enumerate(entries)]
    raise ValueError(f"unsupported marginal format {fmt!r}")
