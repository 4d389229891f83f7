"""World snapshot: CAVs, RSUs and non-connected targets inside the twin domain.

Scenario values are immutable. ``step_mobility`` returns a new snapshot.
Angles are degrees, measured counter-clockwise from east (+x).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Mapping

from .config import (MarketConfig, ProcessParams, market_from_dict, market_to_dict,
                     process_from_dict, process_to_dict)
from .errors import (DegenerateGeometryError, SchemaError, ScenarioValidationError,
                     UnknownEntityError)

Point = tuple[float, float]


@dataclass(frozen=True)
class CavState:
    id: int
    position: Point
    heading: float
    speed: float
    security_radius: float
    local_compute_units: int
    clamped: bool = False


@dataclass(frozen=True)
class RsuState:
    id: int
    position: Point
    edge_compute_units: int


@dataclass(frozen=True)
class NctState:
    id: int
    position: Point
    velocity: Point
    info_value: float
    clamped: bool = False


@dataclass(frozen=True)
class Scenario:
    cavs: tuple[CavState, ...]
    rsus: tuple[RsuState, ...]
    ncts: tuple[NctState, ...]
    twin_domain_radius: float
    time_horizon: int
    angle_sectors: int
    subcarriers: int
    rng_seed: int = 0
    process: ProcessParams = field(default_factory=ProcessParams)
    market: MarketConfig = field(default_factory=MarketConfig)

    def __post_init__(self):
        validate(self)

    def cav(self, cav_id: int) -> CavState:
        for c in self.cavs:
            if c.id == cav_id:
                return c
        raise UnknownEntityError(f"unknown CAV id {cav_id}")

    def rsu(self, rsu_id: int) -> RsuState:
        for r in self.rsus:
            if r.id == rsu_id:
                return r
        raise UnknownEntityError(f"unknown RSU id {rsu_id}")

    def nct(self, nct_id: int) -> NctState:
        for t in self.ncts:
            if t.id == nct_id:
                return t
        raise UnknownEntityError(f"unknown NCT id {nct_id}")

    @property
    def cav_ids(self) -> list[int]:
        return [c.id for c in self.cavs]

    @property
    def rsu_ids(self) -> list[int]:
        return [r.id for r in self.rsus]

    @property
    def nct_ids(self) -> list[int]:
        return [t.id for t in self.ncts]


def validate(s: Scenario) -> None:
    if s.time_horizon < 1 or s.angle_sectors < 1 or s.subcarriers < 1:
        raise ScenarioValidationError("time_horizon, angle_sectors and subcarriers must be >= 1")
    if not s.twin_domain_radius > 0:
        raise ScenarioValidationError("twin_domain_radius must be > 0")
    for kind, items in (("cav", s.cavs), ("rsu", s.rsus), ("nct", s.ncts)):
        ids = [x.id for x in items]
        if len(set(ids)) != len(ids):
            raise ScenarioValidationError(f"duplicate {kind} ids: {ids}")
        for x in items:
            # tiny slack so boundary-clamped entities stay valid
            if math.hypot(*x.position) > s.twin_domain_radius * (1 + 1e-12):
                raise ScenarioValidationError(
                    f"{kind} {x.id} at {x.position} lies outside the twin domain "
                    f"(radius {s.twin_domain_radius})")
    for c in s.cavs:
        if not c.security_radius > 0:
            raise ScenarioValidationError(f"cav {c.id}: security_radius must be > 0")
        if c.local_compute_units < 0:
            raise ScenarioValidationError(f"cav {c.id}: local_compute_units must be >= 0")
        if c.speed < 0:
            raise ScenarioValidationError(f"cav {c.id}: speed must be >= 0")
    max_local = max((c.local_compute_units for c in s.cavs), default=0)
    for r in s.rsus:
        if r.edge_compute_units < max_local:
            raise ScenarioValidationError(
                f"rsu {r.id}: edge_compute_units ({r.edge_compute_units}) below the largest "
                f"local compute unit count ({max_local})")
    for t in s.ncts:
        if not t.info_value >= 0:
            raise ScenarioValidationError(f"nct {t.id}: info_value must be >= 0")


# -- serialization ----------------------------------------------------------

_TOP_KEYS = ("cavs", "rsus", "ncts", "twin_domain_radius", "time_horizon",
             "angle_sectors", "subcarriers", "rng_seed")
_OPTIONAL_KEYS = ("process", "market")


def _num(obj: Mapping, key: str, where: str, integer=False):
    if key not in obj:
        raise SchemaError(f"{where}.{key}", "missing field")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}.{key}", "must be a number")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise SchemaError(f"{where}.{key}", "must be an integer")
        return int(value)
    return float(value)


def _point(obj: Mapping, key: str, where: str) -> Point:
    if key not in obj:
        raise SchemaError(f"{where}.{key}", "missing field")
    value = obj[key]
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
        raise SchemaError(f"{where}.{key}", "must be a pair of numbers")
    return (float(value[0]), float(value[1]))


def _entities(doc: Mapping, key: str) -> list:
    if key not in doc:
        raise SchemaError(key, "missing field")
    if not isinstance(doc[key], list):
        raise SchemaError(key, "must be a list")
    for i, item in enumerate(doc[key]):
        if not isinstance(item, Mapping):
            raise SchemaError(f"{key}[{i}]", "must be an object")
    return doc[key]


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    if not isinstance(doc, Mapping):
        raise SchemaError("<root>", "must be an object")
    for key in doc:
        if key not in _TOP_KEYS and key not in _OPTIONAL_KEYS:
            raise SchemaError(key, "unknown field")
    cavs = tuple(
        CavState(id=_num(c, "id", f"cavs[{i}]", integer=True),
                 position=_point(c, "position", f"cavs[{i}]"),
                 heading=_num(c, "heading", f"cavs[{i}]"),
                 speed=_num(c, "speed", f"cavs[{i}]"),
                 security_radius=_num(c, "security_radius", f"cavs[{i}]"),
                 local_compute_units=_num(c, "local_compute_units", f"cavs[{i}]", integer=True),
                 clamped=bool(c.get("clamped", False)))
        for i, c in enumerate(_entities(doc, "cavs")))
    rsus = tuple(
        RsuState(id=_num(r, "id", f"rsus[{i}]", integer=True),
                 position=_point(r, "position", f"rsus[{i}]"),
                 edge_compute_units=_num(r, "edge_compute_units", f"rsus[{i}]", integer=True))
        for i, r in enumerate(_entities(doc, "rsus")))
    ncts = tuple(
        NctState(id=_num(t, "id", f"ncts[{i}]", integer=True),
                 position=_point(t, "position", f"ncts[{i}]"),
                 velocity=_point(t, "velocity", f"ncts[{i}]"),
                 info_value=_num(t, "info_value", f"ncts[{i}]"),
                 clamped=bool(t.get("clamped", False)))
        for i, t in enumerate(_entities(doc, "ncts")))
    return Scenario(
        cavs=cavs, rsus=rsus, ncts=ncts,
        twin_domain_radius=_num(doc, "twin_domain_radius", "<root>"),
        time_horizon=_num(doc, "time_horizon", "<root>", integer=True),
        angle_sectors=_num(doc, "angle_sectors", "<root>", integer=True),
        subcarriers=_num(doc, "subcarriers", "<root>", integer=True),
        rng_seed=_num(doc, "rng_seed", "<root>", integer=True),
        process=process_from_dict(doc.get("process")),
        market=market_from_dict(doc.get("market")),
    )


def load_scenario(config_text: str) -> Scenario:
    """Parse and validate a scenario document (JSON text)."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def scenario_to_dict(s: Scenario) -> dict:
    doc: dict[str, Any] = {
        "cavs": [{"id": c.id, "position": list(c.position), "heading": c.heading,
                  "speed": c.speed, "security_radius": c.security_radius,
                  "local_compute_units": c.local_compute_units}
                 | ({"clamped": True} if c.clamped else {}) for c in s.cavs],
        "rsus": [{"id": r.id, "position": list(r.position),
                  "edge_compute_units": r.edge_compute_units} for r in s.rsus],
        "ncts": [{"id": t.id, "position": list(t.position), "velocity": list(t.velocity),
                  "info_value": t.info_value}
                 | ({"clamped": True} if t.clamped else {}) for t in s.ncts],
        "twin_domain_radius": s.twin_domain_radius,
        "time_horizon": s.time_horizon,
        "angle_sectors": s.angle_sectors,
        "subcarriers": s.subcarriers,
        "rng_seed": s.rng_seed,
        "process": process_to_dict(s.process),
        "market": market_to_dict(s.market),
    }
    return doc


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def load_fixture(name: str) -> Scenario:
    """Load a scenario bundled with the package (e.g. ``"tiny3x4"``)."""
    text = resources.files("isccmarket").joinpath("data").joinpath(f"{name}.json").read_text("utf-8")
    return load_scenario(text)


# -- dynamics and geometry --------------------------------------------------

def _advance(p: Point, d: Point, radius: float) -> tuple[Point, bool]:
    end = (p[0] + d[0], p[1] + d[1])
    if math.hypot(*end) <= radius:
        return end, False
    # first crossing of |p + t d| = radius for t in [0, 1]
    a = d[0] * d[0] + d[1] * d[1]
    b = 2.0 * (p[0] * d[0] + p[1] * d[1])
    c = p[0] * p[0] + p[1] * p[1] - radius * radius
    disc = max(b * b - 4.0 * a * c, 0.0)
    t = (-b + math.sqrt(disc)) / (2.0 * a)
    t = min(max(t, 0.0), 1.0)
    hit = (p[0] + t * d[0], p[1] + t * d[1])
    norm = math.hypot(*hit)
    if norm > radius:
        hit = (hit[0] * radius / norm, hit[1] * radius / norm)
    return hit, True


def step_mobility(s: Scenario, dt: float) -> Scenario:
    """Advance every CAV and NCT by ``dt`` seconds of straight-line motion.

    Entities that would leave the twin domain stop at the point where their
    path crosses the boundary and get ``clamped=True``.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return s
    R = s.twin_domain_radius
    cavs = []
    for c in s.cavs:
        h = math.radians(c.heading)
        pos, hit = _advance(c.position, (c.speed * dt * math.cos(h), c.speed * dt * math.sin(h)), R)
        cavs.append(replace(c, position=pos, clamped=c.clamped or hit))
    ncts = []
    for t in s.ncts:
        pos, hit = _advance(t.position, (t.velocity[0] * dt, t.velocity[1] * dt), R)
        ncts.append(replace(t, position=pos, clamped=t.clamped or hit))
    return replace(s, cavs=tuple(cavs), ncts=tuple(ncts))


def distance(a: Point, b: Point) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def bearing(a: Point, b: Point) -> float:
    """Bearing from ``a`` to ``b`` in degrees, normalized to [0, 360)."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    if dx == 0 and dy == 0:
        raise DegenerateGeometryError(f"coincident positions {a}")
    deg = math.degrees(math.atan2(dy, dx)) % 360.0
    return 0.0 if deg == 360.0 else deg


def angular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def sector_of(bearing_deg: float, sectors: int) -> int:
    width = 360.0 / sectors
    return min(int(math.floor(bearing_deg / width)), sectors - 1)


def visible_targets(s: Scenario, cav_id: int) -> set[int]:
    """NCT ids inside the CAV's security domain (closed ball)."""
    cav = s.cav(cav_id)
    return {t.id for t in s.ncts if distance(cav.position, t.position) <= cav.security_radius}


def bearing_sector(s: Scenario, cav_id: int, nct_id: int) -> int:
    cav, nct = s.cav(cav_id), s.nct(nct_id)
    return sector_of(bearing(cav.position, nct.position), s.angle_sectors)


def rsu_sector(s: Scenario, cav_id: int, rsu_id: int) -> int:
    cav, rsu = s.cav(cav_id), s.rsu(rsu_id)
    return sector_of(bearing(cav.position, rsu.position), s.angle_sectors)


def nearest_rsu(s: Scenario, cav_id: int) -> int | None:
    if not s.rsus:
        return None
    cav = s.cav(cav_id)
    return min(s.rsus, key=lambda r: (distance(cav.position, r.position), r.id)).id


# -- generation ---------------------------------------------------------------

def generate_scenario(seed: int, cavs: int = 3, rsus: int = 1, ncts: int = 4,
                      radius: float = 100.0, time_horizon: int = 8, angle_sectors: int = 4,
                      subcarriers: int = 4, process: ProcessParams | None = None,
                      market: MarketConfig | None = None) -> Scenario:
    """Random but reproducible snapshot; entities sit in the inner 60% of the domain.

    Coordinates are rounded to 0.1 and kept at least 1 apart so every
    bearing is defined.
    """
    import numpy as np

    if min(cavs, rsus, ncts) < 0:
        raise ScenarioValidationError("entity counts must be >= 0")
    rng = np.random.default_rng(seed)
    placed: list[Point] = []

    def spot() -> Point:
        for _ in range(10_000):
            r = 0.6 * radius * math.sqrt(rng.uniform())
            a = rng.uniform(0.0, 2 * math.pi)
            p = (round(r * math.cos(a), 1), round(r * math.sin(a), 1))
            if all(distance(p, q) >= 1.0 for q in placed):
                placed.append(p)
                return p
        raise ScenarioValidationError("could not place entities without overlap")

    cav_list = tuple(
        CavState(i, spot(), round(float(rng.uniform(0, 360)), 1), round(float(rng.uniform(0, 10)), 1),
                 round(float(rng.uniform(0.3, 0.6)) * radius, 1), int(rng.integers(0, 4)))
        for i in range(cavs))
    max_local = max((c.local_compute_units for c in cav_list), default=0)
    rsu_list = tuple(RsuState(i, spot(), max(max_local, int(rng.integers(4, 11))))
                     for i in range(rsus))
    nct_list = tuple(
        NctState(i, spot(), (round(float(rng.uniform(-2, 2)), 1), round(float(rng.uniform(-2, 2)), 1)),
                 float(rng.integers(4, 25)))
        for i in range(ncts))
    return Scenario(cav_list, rsu_list, nct_list, float(radius), time_horizon, angle_sectors,
                    subcarriers, seed, process or ProcessParams(), market or MarketConfig())
