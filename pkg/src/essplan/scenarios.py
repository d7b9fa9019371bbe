"""Prosumption scenario generation and reduction.

Scenarios are per-day-type samples of nodal active/reactive prosumption around
a given forecast, drawn from independent normals whose standard deviation is a
relative fraction of the forecast magnitude. Reduction clusters the flattened
scenario vectors with PAM k-medoids and grows k until the quantile-wise
distance between the full and reduced empirical distributions drops below a
tolerance.

Flattened coordinate layout (one vector per scenario): for each non-slack bus
in ascending id order, T active values, then for each bus T reactive values,
then (optionally) T values of a shared PV profile when one is supplied. All
scenarios of a day-type share the same length H.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DayType",
    "ScenarioSet",
    "ReductionConfig",
    "ReductionResult",
    "ToleranceNotReached",
    "generate_scenarios",
    "kmedoids",
    "empirical_cdf_inverse",
    "cdf_distance",
    "reduce_scenarios",
    "load_scenarios",
    "save_scenarios",
]


class ScenarioError(ValueError):
    pass


class ToleranceNotReached(RuntimeError):
    """Reduction hit max_k before meeting the distance tolerance; carries the best set."""

    def __init__(self, message: str, best: "ReductionResult"):
        super().__init__(message)
        self.best = best


@dataclass
class DayType:
    """A representative day class with its calendar weight and forecast."""

    id: int
    n_days: float
    bus_ids: list[int]
    p_forecast: np.ndarray  # (n_bus, T), pu
    q_forecast: np.ndarray  # (n_bus, T), pu
    delta_t_h: float = 1.0
    sigma: np.ndarray | float = 0.1  # relative std of prosumption noise, per bus or scalar
    sigma_q: np.ndarray | float | None = None  # defaults to sigma
    pv_profile: np.ndarray | None = None  # optional shared PV block for clustering, (T,)

    def __post_init__(self) -> None:
        self.p_forecast = np.asarray(self.p_forecast, dtype=float)
        self.q_forecast = np.asarray(self.q_forecast, dtype=float)
        if self.p_forecast.shape != self.q_forecast.shape:
            raise ScenarioError("p/q forecasts must have identical shapes")
        if self.p_forecast.shape[0] != len(self.bus_ids):
            raise ScenarioError("forecast rows must match bus_ids")
        if abs(self.horizon_h - 24.0) > 1e-9:
            raise ScenarioError("T * delta_t must span 24 h")
        if np.any(np.asarray(self.sigma) < 0):
            raise ScenarioError("sigma must be nonnegative")

    @property
    def n_t(self) -> int:
        return self.p_forecast.shape[1]

    @property
    def horizon_h(self) -> float:
        return self.p_forecast.shape[1] * self.delta_t_h


@dataclass
class ScenarioSet:
    """Scenarios of one day-type, with probabilities and the forecast they deviate from."""

    day_type: int
    n_days: float
    bus_ids: list[int]
    p: np.ndarray  # (n_scen, n_bus, T), pu
    q: np.ndarray
    lambdas: np.ndarray  # (n_scen,), sums to 1
    p_forecast: np.ndarray  # (n_bus, T) prediction the dispatch plan tracks
    q_forecast: np.ndarray
    delta_t_h: float = 1.0
    pv_profile: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.p_forecast = np.asarray(self.p_forecast, dtype=float)
        self.q_forecast = np.asarray(self.q_forecast, dtype=float)
        if self.p.shape != self.q.shape or self.p.ndim != 3:
            raise ScenarioError("p and q must be (n_scen, n_bus, T) with equal shapes")
        if len(self.lambdas) != self.p.shape[0]:
            raise ScenarioError("one probability per scenario required")
        if abs(self.lambdas.sum() - 1.0) > 1e-12:
            raise ScenarioError("scenario probabilities must sum to 1 within 1e-12")
        if np.any(self.lambdas <= 0):
            raise ScenarioError("scenario probabilities must be positive")

    @property
    def n_scen(self) -> int:
        return self.p.shape[0]

    @property
    def n_t(self) -> int:
        return self.p.shape[2]

    def vectors(self) -> np.ndarray:
        """Flattened clustering coordinates, (n_scen, H)."""
        blocks = [self.p.reshape(self.n_scen, -1), self.q.reshape(self.n_scen, -1)]
        if self.pv_profile is not None:
            blocks.append(np.broadcast_to(self.pv_profile, (self.n_scen, len(self.pv_profile))))
        return np.concatenate(blocks, axis=1)

    def deviation_sums(self) -> np.ndarray:
        """sum over buses of (forecast - scenario) active prosumption, (n_scen, T)."""
        return (self.p_forecast[None, :, :] - self.p).sum(axis=1)


def generate_scenarios(day: DayType, n: int, seed: int) -> ScenarioSet:
    """Draw ``n`` equally probable prosumption scenarios around the forecast.

    p ~ Normal(forecast, (sigma*|forecast|)^2) independently per bus and
    timestep; reactive likewise with sigma_q. Bit-reproducible for a fixed
    seed: the generator is seeded from (seed, day id) and active noise is
    drawn before reactive noise.
    """
    if n < 1:
        raise ScenarioError("scenario count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(day.id)]))
    sig_p = np.broadcast_to(np.atleast_1d(np.asarray(day.sigma, dtype=float)),
                            (len(day.bus_ids),))[:, None]
    sig_q_src = day.sigma if day.sigma_q is None else day.sigma_q
    sig_q = np.broadcast_to(np.atleast_1d(np.asarray(sig_q_src, dtype=float)),
                            (len(day.bus_ids),))[:, None]
    scale_p = sig_p * np.abs(day.p_forecast)
    scale_q = sig_q * np.abs(day.q_forecast)
    p = day.p_forecast[None] + rng.standard_normal((n, *day.p_forecast.shape)) * scale_p[None]
    q = day.q_forecast[None] + rng.standard_normal((n, *day.q_forecast.shape)) * scale_q[None]
    return ScenarioSet(
        day_type=day.id,
        n_days=day.n_days,
        bus_ids=list(day.bus_ids),
        p=p,
        q=q,
        lambdas=np.full(n, 1.0 / n),
        p_forecast=day.p_forecast.copy(),
        q_forecast=day.q_forecast.copy(),
        delta_t_h=day.delta_t_h,
        pv_profile=None if day.pv_profile is None else np.asarray(day.pv_profile, dtype=float),
    )


# ------------------------------------------------------------------ k-medoids


def kmedoids(points: np.ndarray, k: int, seed: int = 0):
    """PAM (greedy build + steepest-descent swap) on Euclidean distances.

    Fully deterministic: the build step is greedy and ties break toward the
    lowest index, so ``seed`` is accepted for interface stability but unused.
    Returns (medoid indices, assignment, cluster sizes).
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ScenarioError(f"k must be in [1, {n}], got {k}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    # BUILD: start from the 1-medoid optimum, then greedily add the point
    # that most reduces the total distance to the nearest medoid
    medoids = [int(np.argmin(dist.sum(axis=1)))]
    nearest = dist[medoids[0]].copy()
    while len(medoids) < k:
        reduction = np.maximum(nearest[None, :] - dist, 0.0).sum(axis=1)
        reduction[medoids] = -1.0
        cand = int(np.argmax(reduction))
        medoids.append(cand)
        nearest = np.minimum(nearest, dist[cand])

    # SWAP: steepest descent over (medoid, candidate) exchanges
    med = np.array(sorted(medoids))
    while True:
        dmed = dist[med]  # (k, n)
        order = np.argsort(dmed, axis=0)
        d1 = dmed[order[0], np.arange(n)]
        d2 = dmed[order[1], np.arange(n)] if k > 1 else np.full(n, np.inf)
        best_delta, best_swap = -1e-12, None
        for mi in range(k):
            is_nearest = order[0] == mi
            # cost after removing medoid mi, per point: d2 where mi was nearest else d1
            base = np.where(is_nearest, d2, d1)
            gains = (np.minimum(base[None, :], dist) - d1[None, :]).sum(axis=1)
            gains[med] = np.inf
            h = int(np.argmin(gains))
            delta = float(gains[h])
            if delta < best_delta - 1e-15:
                best_delta, best_swap = delta, (mi, h)
        if best_swap is None:
            break
        mi, h = best_swap
        med[mi] = h
        med = np.array(sorted(med))
    assignment = med[np.argmin(dist[med], axis=0)]
    # medoids represent themselves even under distance ties
    assignment[med] = med
    sizes = np.array([(assignment == m).sum() for m in med])
    return med, assignment, sizes


# ----------------------------------------------------------------- CDF tools


def empirical_cdf_inverse(values: np.ndarray, probabilities: np.ndarray, y: float) -> float:
    """Probability-weighted order statistic: the smallest value whose cumulative
    probability reaches ``y``. y=0 returns the minimum sample."""
    if not 0.0 <= y <= 1.0:
        raise ScenarioError("quantile level must lie in [0, 1]")
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise ScenarioError("empty sample")
    probs = np.asarray(probabilities, dtype=float)
    order = np.argsort(vals, kind="stable")
    cum = np.cumsum(probs[order])
    pos = int(np.searchsorted(cum, y - 1e-12, side="left"))
    pos = min(pos, vals.size - 1)
    return float(vals[order][pos])


def _cdf_inverse_matrix(vectors: np.ndarray, probs: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Inverse CDF of each coordinate at each level; (n_levels, H)."""
    order = np.argsort(vectors, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(vectors, order, axis=0)
    cum = np.cumsum(probs[order], axis=0)
    out = np.empty((len(levels), vectors.shape[1]))
    for j in range(vectors.shape[1]):
        pos = np.searchsorted(cum[:, j], levels - 1e-12, side="left")
        pos = np.minimum(pos, vectors.shape[0] - 1)
        out[:, j] = sorted_vals[pos, j]
    return out


@dataclass
class ReductionConfig:
    n_q: int = 5
    quantile_lo: float = 0.05
    quantile_hi: float = 0.95
    weights: np.ndarray | None = None  # one per check point, sums to 1; uniform by default
    tolerance: float = 0.05
    max_k: int = 50
    seed: int = 0

    def levels(self) -> np.ndarray:
        if not 0.0 <= self.quantile_lo < self.quantile_hi <= 1.0:
            raise ScenarioError("need 0 <= quantile_lo < quantile_hi <= 1")
        return np.linspace(self.quantile_lo, self.quantile_hi, self.n_q)

    def level_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_q, 1.0 / self.n_q)
        w = np.asarray(self.weights, dtype=float)
        if len(w) != self.n_q or abs(w.sum() - 1.0) > 1e-9:
            raise ScenarioError("check-point weights must have length n_q and sum to 1")
        return w


def cdf_distance(full: ScenarioSet, reduced: ScenarioSet, cfg: ReductionConfig) -> float:
    """Weighted quantile-space distance between two scenario sets.

    For each check-point level, compares the inverse CDFs of every flattened
    coordinate relative to the full set's value. Coordinates whose full-set
    quantile is zero are skipped (with a warning) so that identically-zero
    profiles, e.g. night-time PV, do not divide by zero.
    """
    vf, vr = full.vectors(), reduced.vectors()
    if vf.shape[1] != vr.shape[1]:
        raise ScenarioError("scenario sets have different coordinate counts")
    levels = cfg.levels()
    weights = cfg.level_weights()
    inv_full = _cdf_inverse_matrix(vf, full.lambdas, levels)
    inv_red = _cdf_inverse_matrix(vr, reduced.lambdas, levels)
    total = 0.0
    skipped = 0
    for wq, a_row, b_row in zip(weights, inv_full, inv_red):
        keep = np.abs(a_row) > 1e-12
        skipped += int((~keep).sum())
        if not np.any(keep):
            raise ScenarioError("degenerate coordinate: all full-set quantiles are zero")
        rel = (a_row[keep] - b_row[keep]) / a_row[keep]
        total += wq * float(np.sqrt(np.mean(rel * rel)))
    if skipped:
        log.warning("cdf_distance skipped %d zero-quantile coordinate terms", skipped)
    return total


@dataclass
class ReductionResult:
    scenarios: ScenarioSet
    k: int
    deltas: list[float] = field(default_factory=list)  # distance trace for k = 1, 2, ...


def _medoid_set(full: ScenarioSet, k: int, seed: int) -> ScenarioSet:
    med, _assign, sizes = kmedoids(full.vectors(), k, seed)
    return ScenarioSet(
        day_type=full.day_type,
        n_days=full.n_days,
        bus_ids=list(full.bus_ids),
        p=full.p[med],
        q=full.q[med],
        lambdas=sizes / sizes.sum(),
        p_forecast=full.p_forecast,
        q_forecast=full.q_forecast,
        delta_t_h=full.delta_t_h,
        pv_profile=full.pv_profile,
    )


def reduce_scenarios(full: ScenarioSet, cfg: ReductionConfig) -> ReductionResult:
    """Grow the reduced set one medoid at a time until the CDF distance is
    below tolerance. Probabilities of the reduced set are cluster proportions."""
    if full.n_scen < 1:
        raise ScenarioError("empty scenario set")
    deltas: list[float] = []
    best: ReductionResult | None = None
    max_k = min(cfg.max_k, full.n_scen)
    for k in range(1, max_k + 1):
        reduced = _medoid_set(full, k, cfg.seed)
        delta = cdf_distance(full, reduced, cfg)
        deltas.append(delta)
        if best is None or delta < min(deltas[:-1]):
            best = ReductionResult(scenarios=reduced, k=k, deltas=[])
        if delta < cfg.tolerance:
            return ReductionResult(scenarios=reduced, k=k, deltas=deltas)
    assert best is not None
    best.deltas = deltas
    raise ToleranceNotReached(
        f"distance {min(deltas):.4g} after k={max_k} still above tolerance {cfg.tolerance:.4g}",
        best,
    )


# -------------------------------------------------------------------- file IO


def save_scenarios(scen: ScenarioSet, path) -> None:
    doc = {
        "day_type": scen.day_type,
        "n_days": scen.n_days,
        "delta_t_h": scen.delta_t_h,
        "bus_ids": list(scen.bus_ids),
        "p_forecast": scen.p_forecast.tolist(),
        "q_forecast": scen.q_forecast.tolist(),
        "lambdas": scen.lambdas.tolist(),
        "scenarios": [
            {"p": scen.p[i].tolist(), "q": scen.q[i].tolist()} for i in range(scen.n_scen)
        ],
    }
    if scen.pv_profile is not None:
        doc["pv_profile"] = scen.pv_profile.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_scenarios(path) -> ScenarioSet:
    with open(path) as fh:
        doc = json.load(fh)
    return ScenarioSet(
        day_type=int(doc["day_type"]),
        n_days=float(doc["n_days"]),
        bus_ids=[int(b) for b in doc["bus_ids"]],
        p=np.array([s["p"] for s in doc["scenarios"]]),
        q=np.array([s["q"] for s in doc["scenarios"]]),
        lambdas=np.array(doc["lambdas"]),
        p_forecast=np.array(doc["p_forecast"]),
        q_forecast=np.array(doc["q_forecast"]),
        delta_t_h=float(doc["delta_t_h"]),
        pv_profile=np.array(doc["pv_profile"]) if "pv_profile" in doc else None,
    )


def load_day_types(path) -> list[DayType]:
    """Forecast file: {"day_types": [{id, n_days, delta_t_h, bus_ids, p_forecast,
    q_forecast, sigma, sigma_q?, pv_profile?}]}."""
    with open(path) as fh:
        doc = json.load(fh)
    days = []
    for rec in doc["day_types"]:
        days.append(DayType(
            id=int(rec["id"]),
            n_days=float(rec["n_days"]),
            bus_ids=[int(b) for b in rec["bus_ids"]],
            p_forecast=np.array(rec["p_forecast"]),
            q_forecast=np.array(rec["q_forecast"]),
            delta_t_h=float(rec.get("delta_t_h", 1.0)),
            sigma=np.array(rec["sigma"]) if isinstance(rec.get("sigma"), list) else float(rec.get("sigma", 0.1)),
            sigma_q=(np.array(rec["sigma_q"]) if isinstance(rec.get("sigma_q"), list)
                     else (float(rec["sigma_q"]) if "sigma_q" in rec else None)),
            pv_profile=np.array(rec["pv_profile"]) if "pv_profile" in rec else None,
        ))
    total = sum(d.n_days for d in days)
    if total > 366.0 + 1e-9:
        raise ScenarioError(f"day-type calendar weights sum to {total} > 366")
    return days
