"""Radial feeder data model: buses, pi-model lines, storage candidates, per-unit handling.

Line ids follow the downstream-bus convention: the line feeding bus l is line l,
so lines and non-slack buses are in bijection. All electrical quantities are
stored in per-unit; voltage bounds and ampacity are stored *squared* (pu^2)
because every constraint that touches them is written on squared magnitudes.
The shunt susceptance ``b`` is the per-end value of the pi-model: a data source
quoting the full line charging susceptance B must enter b = B/2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

__all__ = [
    "Bus",
    "Line",
    "EssCandidate",
    "CostParams",
    "RadialNetwork",
    "NetworkError",
    "to_per_unit",
    "from_per_unit",
    "load_network",
    "save_network",
    "network_to_dict",
]

# ampacity at or above this (pu^2) means "unconstrained"; cones are omitted
AMPACITY_RELAXED = 1.0e6


class NetworkError(ValueError):
    """Raised for malformed or physically inconsistent network files."""


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False
    v_min: float = 0.95**2  # squared magnitude lower bound, pu^2
    v_max: float = 1.05**2  # squared magnitude upper bound, pu^2


@dataclass(frozen=True)
class Line:
    """Pi-model line; ``id`` equals its downstream bus id."""

    id: int
    up: int
    r: float  # longitudinal resistance, pu
    x: float  # longitudinal reactance, pu
    b: float  # per-end shunt susceptance, pu
    i_max: float  # squared ampacity, pu^2
    p_max: float | None = None  # cap on the upper-bound sending-end active flow, pu
    q_max: float | None = None

    @property
    def z_abs2(self) -> float:
        return self.r * self.r + self.x * self.x

    @property
    def ampacity_relaxed(self) -> bool:
        return self.i_max >= AMPACITY_RELAXED


@dataclass(frozen=True)
class EssCandidate:
    bus: int
    r_min: float = 0.0  # power rating bounds, pu
    r_max: float = 0.5
    c_min: float = 0.0  # energy reservoir bounds, pu*h
    c_max: float = 1.0
    cr_min: float = 1.0  # minimum discharge duration, h (rating <= reservoir / cr_min)
    e_min_frac: float = 0.1  # state-of-energy window as fractions of the reservoir
    e_max_frac: float = 0.9

    def validate(self) -> None:
        if not 0.0 <= self.r_min <= self.r_max:
            raise NetworkError(f"candidate at bus {self.bus}: need 0 <= r_min <= r_max")
        if not 0.0 <= self.c_min <= self.c_max:
            raise NetworkError(f"candidate at bus {self.bus}: need 0 <= c_min <= c_max")
        if not 0.0 <= self.e_min_frac < self.e_max_frac <= 1.0:
            raise NetworkError(
                f"candidate at bus {self.bus}: need 0 <= e_min_frac < e_max_frac <= 1"
            )
        if self.cr_min <= 0.0:
            raise NetworkError(f"candidate at bus {self.bus}: cr_min must be > 0")


@dataclass
class CostParams:
    """Investment and operating cost coefficients (all in USD-denominated units)."""

    site_usd: float = 1.0e5  # fixed cost per installed site
    power_usd_per_kva: float = 200.0
    energy_usd_per_kwh: float = 300.0
    imbalance_usd_per_mwh: dict[int, float] | float = 700.0  # per day-type or flat
    loss_usd_per_mwh: float = 60.0
    unserved_usd_per_mwh: float | None = None  # defaults to 1000x loss price
    horizon_years: float = 10.0
    n_days: dict[int, float] = field(default_factory=dict)  # per day-type, optional

    def __post_init__(self) -> None:
        if self.unserved_usd_per_mwh is None:
            self.unserved_usd_per_mwh = 1000.0 * self.loss_usd_per_mwh
        for name in ("site_usd", "power_usd_per_kva", "energy_usd_per_kwh",
                     "loss_usd_per_mwh", "unserved_usd_per_mwh", "horizon_years"):
            if getattr(self, name) < 0:
                raise NetworkError(f"cost parameter {name} must be nonnegative")
        if self.unserved_usd_per_mwh <= self.loss_usd_per_mwh:
            raise NetworkError("unserved-load price must exceed the loss price")

    def imbalance_price(self, day_type: int) -> float:
        if isinstance(self.imbalance_usd_per_mwh, dict):
            return self.imbalance_usd_per_mwh[day_type]
        return float(self.imbalance_usd_per_mwh)


def to_per_unit(value: float, kind: str, base: dict) -> float:
    """Convert a physical quantity to per-unit. kind: power (MVA) | voltage (kV) | impedance (ohm)."""
    s_base = float(base["s_base_mva"])
    v_base = float(base["v_base_kv"])
    if s_base <= 0 or v_base <= 0:
        raise NetworkError("per-unit bases must be positive")
    if kind == "power":
        return value / s_base
    if kind == "voltage":
        return value / v_base
    if kind == "impedance":
        return value / (v_base * v_base / s_base)
    raise NetworkError(f"unknown per-unit kind {kind!r}")


def from_per_unit(value: float, kind: str, base: dict) -> float:
    s_base = float(base["s_base_mva"])
    v_base = float(base["v_base_kv"])
    if s_base <= 0 or v_base <= 0:
        raise NetworkError("per-unit bases must be positive")
    if kind == "power":
        return value * s_base
    if kind == "voltage":
        return value * v_base
    if kind == "impedance":
        return value * (v_base * v_base / s_base)
    raise NetworkError(f"unknown per-unit kind {kind!r}")


def _current_base_a(base: dict) -> float:
    # three-phase base: I = S / (sqrt(3) V), with S in MVA and V in kV line-to-line
    return 1.0e3 * float(base["s_base_mva"]) / (math.sqrt(3.0) * float(base["v_base_kv"]))


class RadialNetwork:
    """Validated radial feeder. Immutable after construction; safe to share across solves."""

    def __init__(self, buses, lines, per_unit, slack_v=1.0, candidates=(), costs=None):
        self.buses: dict[int, Bus] = {b.id: b for b in buses}
        self.lines: dict[int, Line] = {l.id: l for l in lines}
        self.per_unit = dict(per_unit)
        self.slack_v = float(slack_v)  # squared slack voltage, pu^2
        self.candidates: tuple[EssCandidate, ...] = tuple(candidates)
        self.costs: CostParams = costs if costs is not None else CostParams()
        self._validate()
        # children[k] = line ids m with up(m) = k (the adjacency used in power-balance sums)
        children: dict[int, list[int]] = {b: [] for b in self.buses}
        for line in self.lines.values():
            children[line.up].append(line.id)
        self.children: dict[int, tuple[int, ...]] = {
            b: tuple(sorted(ids)) for b, ids in children.items()
        }
        # lines ordered root-to-leaf (parents before children)
        order: list[int] = []
        stack = list(reversed(self.children[self.slack_id]))
        while stack:
            lid = stack.pop()
            order.append(lid)
            stack.extend(reversed(self.children[lid]))
        self.line_order: tuple[int, ...] = tuple(order)

    # ------------------------------------------------------------------ setup

    def _validate(self) -> None:
        if len(self.buses) != len({b for b in self.buses}):
            raise NetworkError("duplicate bus ids")
        slacks = [b.id for b in self.buses.values() if b.is_slack]
        if len(slacks) != 1:
            raise NetworkError(f"exactly one slack bus required, found {len(slacks)}")
        self.slack_id = slacks[0]
        if self.slack_v <= 0:
            raise NetworkError("slack voltage (squared) must be positive")
        if float(self.per_unit.get("s_base_mva", 0)) <= 0 or float(self.per_unit.get("v_base_kv", 0)) <= 0:
            raise NetworkError("per-unit bases must be positive")
        for bus in self.buses.values():
            if not 0.0 < bus.v_min < bus.v_max:
                raise NetworkError(f"bus {bus.id}: need 0 < v_min < v_max (squared pu)")
        seen_down: set[int] = set()
        for line in self.lines.values():
            if line.id in seen_down:
                raise NetworkError(f"cycle detected: bus {line.id} fed by more than one line")
            seen_down.add(line.id)
            if line.id == self.slack_id:
                raise NetworkError("cycle detected: a line feeds the slack bus")
            if line.id not in self.buses or line.up not in self.buses:
                raise NetworkError(f"line {line.id}: endpoint bus missing")
            if line.r < 0 or line.x < 0 or line.b < 0:
                raise NetworkError(f"line {line.id}: r, x, b must be nonnegative")
            if line.i_max <= 0:
                raise NetworkError(f"line {line.id}: squared ampacity must be positive")
        non_slack = set(self.buses) - {self.slack_id}
        missing = non_slack - seen_down
        if missing:
            raise NetworkError(f"disconnected bus(es): {sorted(missing)} have no supplying line")
        # reachability from the slack; unreached lines imply a cycle detached from the root
        reached: set[int] = set()
        frontier = [self.slack_id]
        by_up: dict[int, list[int]] = {}
        for line in self.lines.values():
            by_up.setdefault(line.up, []).append(line.id)
        while frontier:
            nxt: list[int] = []
            for bus in frontier:
                for lid in by_up.get(bus, ()):
                    if lid in reached:
                        raise NetworkError("cycle detected")
                    reached.add(lid)
                    nxt.append(lid)
            frontier = nxt
        if reached != seen_down:
            raise NetworkError(
                f"cycle detected: lines {sorted(seen_down - reached)} unreachable from slack"
            )

    # ------------------------------------------------------------- navigation

    def up_v_bound(self, line_id: int) -> tuple[float, float]:
        """(v_min, v_max) of the upstream bus of a line (slack: fixed voltage)."""
        up = self.lines[line_id].up
        if up == self.slack_id:
            return (self.slack_v, self.slack_v)
        bus = self.buses[up]
        return (bus.v_min, bus.v_max)

    def descendants(self, line_id: int) -> set[int]:
        """All lines strictly below ``line_id`` (subtree of its downstream bus)."""
        if line_id not in self.lines:
            raise NetworkError(f"unknown line id {line_id}")
        out: set[int] = set()
        stack = list(self.children[line_id])
        while stack:
            m = stack.pop()
            out.add(m)
            stack.extend(self.children[m])
        return out

    @property
    def non_slack_buses(self) -> list[int]:
        return [b for b in sorted(self.buses) if b != self.slack_id]

    def candidate(self, bus: int) -> EssCandidate:
        for cand in self.candidates:
            if cand.bus == bus:
                return cand
        raise NetworkError(f"no storage candidate at bus {bus}")


# ---------------------------------------------------------------------- files


def _line_from_record(rec: dict, base: dict) -> Line:
    def pick(pu_key: str, phys_key: str, kind: str) -> float:
        if pu_key in rec:
            return float(rec[pu_key])
        if phys_key in rec:
            if kind == "impedance":
                return to_per_unit(float(rec[phys_key]), "impedance", base)
            if kind == "susceptance":
                # siemens -> pu admittance is multiplication by Z_base
                return float(rec[phys_key]) * (float(base["v_base_kv"]) ** 2 / float(base["s_base_mva"]))
            raise NetworkError(kind)
        raise NetworkError(f"line {rec.get('down')}: need {pu_key} or {phys_key}")

    if "i_max_pu2" in rec:
        i_max = float(rec["i_max_pu2"])
    elif "ampacity_a" in rec:
        i_max = (float(rec["ampacity_a"]) / _current_base_a(base)) ** 2
    else:
        raise NetworkError(f"line {rec.get('down')}: need i_max_pu2 or ampacity_a")
    return Line(
        id=int(rec["down"]),
        up=int(rec["up"]),
        r=pick("r_pu", "r_ohm", "impedance"),
        x=pick("x_pu", "x_ohm", "impedance"),
        b=pick("b_pu", "b_siemens", "susceptance"),
        i_max=i_max,
        p_max=float(rec["p_max_pu"]) if "p_max_pu" in rec else None,
        q_max=float(rec["q_max_pu"]) if "q_max_pu" in rec else None,
    )


def _candidate_from_record(rec: dict, base: dict) -> EssCandidate:
    s_base = float(base["s_base_mva"])

    def power(pu_key, mva_key, default):
        if pu_key in rec:
            return float(rec[pu_key])
        if mva_key in rec:
            return float(rec[mva_key]) / s_base
        return default

    def energy(pu_key, mwh_key, default):
        if pu_key in rec:
            return float(rec[pu_key])
        if mwh_key in rec:
            return float(rec[mwh_key]) / s_base
        return default

    cand = EssCandidate(
        bus=int(rec["bus"]),
        r_min=power("r_min_pu", "r_min_mva", 0.0),
        r_max=power("r_max_pu", "r_max_mva", 0.5),
        c_min=energy("c_min_puh", "c_min_mwh", 0.0),
        c_max=energy("c_max_puh", "c_max_mwh", 1.0),
        cr_min=float(rec.get("cr_min_h", 1.0)),
        e_min_frac=float(rec.get("e_min_frac", 0.1)),
        e_max_frac=float(rec.get("e_max_frac", 0.9)),
    )
    cand.validate()
    return cand


def _costs_from_record(rec: dict) -> CostParams:
    imbalance = rec.get("imbalance_usd_per_mwh", 700.0)
    if isinstance(imbalance, dict):
        imbalance = {int(k): float(v) for k, v in imbalance.items()}
    return CostParams(
        site_usd=float(rec.get("site_usd", 1.0e5)),
        power_usd_per_kva=float(rec.get("power_usd_per_kva", 200.0)),
        energy_usd_per_kwh=float(rec.get("energy_usd_per_kwh", 300.0)),
        imbalance_usd_per_mwh=imbalance,
        loss_usd_per_mwh=float(rec.get("loss_usd_per_mwh", 60.0)),
        unserved_usd_per_mwh=(
            float(rec["unserved_usd_per_mwh"]) if "unserved_usd_per_mwh" in rec else None
        ),
        horizon_years=float(rec.get("horizon_years", 10.0)),
        n_days={int(k): float(v) for k, v in rec.get("n_days", {}).items()},
    )


def network_from_dict(doc: dict) -> RadialNetwork:
    try:
        base = doc["bases"]
        buses = [
            Bus(
                id=int(rec["id"]),
                is_slack=bool(rec.get("slack", False)),
                v_min=float(rec.get("v_min_pu", 0.95)) ** 2,
                v_max=float(rec.get("v_max_pu", 1.05)) ** 2,
            )
            for rec in doc["buses"]
        ]
        lines = [_line_from_record(rec, base) for rec in doc["lines"]]
        candidates = [_candidate_from_record(rec, base) for rec in doc.get("ess_candidates", [])]
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"network file parse error: {exc}") from exc
    costs = _costs_from_record(doc.get("costs", {}))
    for cand in candidates:
        if cand.bus not in {b.id for b in buses}:
            raise NetworkError(f"storage candidate at unknown bus {cand.bus}")
    return RadialNetwork(
        buses=buses,
        lines=lines,
        per_unit={"s_base_mva": float(base["s_base_mva"]), "v_base_kv": float(base["v_base_kv"])},
        slack_v=float(doc.get("slack_v_pu2", 1.0)),
        candidates=candidates,
        costs=costs,
    )


def load_network(path) -> RadialNetwork:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"network file parse error: {exc}") from exc
    return network_from_dict(doc)


def network_to_dict(net: RadialNetwork) -> dict:
    """Canonical all-per-unit form (what the ``normalize`` subcommand emits)."""
    costs = net.costs
    doc = {
        "bases": dict(net.per_unit),
        "slack_v_pu2": net.slack_v,
        "buses": [
            {
                "id": b.id,
                **({"slack": True} if b.is_slack else {}),
                "v_min_pu": math.sqrt(b.v_min),
                "v_max_pu": math.sqrt(b.v_max),
            }
            for b in sorted(net.buses.values(), key=lambda b: b.id)
        ],
        "lines": [
            {
                "down": l.id,
                "up": l.up,
                "r_pu": l.r,
                "x_pu": l.x,
                "b_pu": l.b,
                "i_max_pu2": l.i_max,
                **({"p_max_pu": l.p_max} if l.p_max is not None else {}),
                **({"q_max_pu": l.q_max} if l.q_max is not None else {}),
            }
            for l in sorted(net.lines.values(), key=lambda l: l.id)
        ],
        "ess_candidates": [
            {
                "bus": c.bus,
                "r_min_pu": c.r_min,
                "r_max_pu": c.r_max,
                "c_min_puh": c.c_min,
                "c_max_puh": c.c_max,
                "cr_min_h": c.cr_min,
                "e_min_frac": c.e_min_frac,
                "e_max_frac": c.e_max_frac,
            }
            for c in net.candidates
        ],
        "costs": {
            "site_usd": costs.site_usd,
            "power_usd_per_kva": costs.power_usd_per_kva,
            "energy_usd_per_kwh": costs.energy_usd_per_kwh,
            "imbalance_usd_per_mwh": (
                {str(k): v for k, v in costs.imbalance_usd_per_mwh.items()}
                if isinstance(costs.imbalance_usd_per_mwh, dict)
                else costs.imbalance_usd_per_mwh
            ),
            "loss_usd_per_mwh": costs.loss_usd_per_mwh,
            "unserved_usd_per_mwh": costs.unserved_usd_per_mwh,
            "horizon_years": costs.horizon_years,
            **({"n_days": {str(k): v for k, v in costs.n_days.items()}} if costs.n_days else {}),
        },
    }
    return doc


def save_network(net: RadialNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=2, sort_keys=True)
        fh.write("\n")
