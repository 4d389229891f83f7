"""Sensing, transfer and extraction processes that turn pool cells into information.

Detection follows a per-slot Bernoulli model: with per-slot probability ``p``
and ``n`` sensing slots the expected detection quality is ``1 - (1 - p)**n``.
In sampled mode one draw of that process is taken from the supplied
generator instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .config import SAMPLED, ProcessParams
from .errors import (DependencyError, OwnershipError, RegionRestrictionError,
                     SensingGeometryError)
from .resource_pool import COMPUTE, FREQ, SPACE, TwinResourcePool
from .scenario import (Scenario, angular_distance, bearing, distance, sector_of,
                       step_mobility)

AWS, PWS = "AWS", "PWS"


@dataclass(frozen=True)
class SensingResult:
    target_id: int
    mode: str
    data_volume: float
    quality: float
    false_alarm_volume: float
    receipts: tuple[int, ...] = ()
    slots: tuple[int, ...] = ()

    @property
    def raw_volume(self) -> float:
        return self.data_volume + self.false_alarm_volume


@dataclass(frozen=True)
class InformationRecord:
    target_id: int
    info: float
    site: str
    contract_id: int | None = None


def detection_quality(p: float, n: int) -> float:
    return 1.0 - (1.0 - p) ** n


def sample_detections(p: float, n: int, rng: np.random.Generator, size=None):
    """Draw per-slot Bernoulli detections; 1 where any of ``n`` slots detects."""
    shape = (n,) if size is None else (size, n)
    hits = rng.random(shape) < p
    return hits.any(axis=-1).astype(float)


def _snapshot_at(s: Scenario, slot: int, params: ProcessParams) -> Scenario:
    if params.slot_seconds == 0 or slot == 0:
        return s
    return step_mobility(s, slot * params.slot_seconds)


def _check_receipt(pool: TwinResourcePool, rid: int, kind: str, owner) -> None:
    req = pool.receipt(rid).request
    if req.pool_kind != kind:
        raise OwnershipError(f"receipt {rid} is a {req.pool_kind} allocation, expected {kind}")
    if req.owner != owner:
        raise OwnershipError(f"receipt {rid} belongs to {req.owner!r}, not {owner!r}")


def _in_security_domain(s: Scenario, cav_id: int, nct_id: int) -> bool:
    cav, nct = s.cav(cav_id), s.nct(nct_id)
    return distance(cav.position, nct.position) <= cav.security_radius


def _sense(s, mode, nct_id, n, params, receipts, slots, rng) -> SensingResult:
    p = params.detection_probability(mode)
    if params.mode == SAMPLED and n > 0:
        if rng is None:
            raise ValueError("sampled mode needs a random generator")
        q = float(sample_detections(p, n, rng))
        fa_slots = int(rng.binomial(n, params.p_fa))
    else:
        q = detection_quality(p, n)
        fa_slots = params.p_fa * n
    return SensingResult(target_id=nct_id, mode=mode, data_volume=params.d0 * n, quality=q,
                         false_alarm_volume=params.d0 * fa_slots,
                         receipts=tuple(receipts), slots=tuple(slots))


def aws_sense(s: Scenario, pool: TwinResourcePool, cav_id: int, nct_id: int,
              space_receipt: int | None, freq_receipt: int | None,
              params: ProcessParams, rng: np.random.Generator | None = None) -> SensingResult:
    """Active sensing: a dedicated beam tracks the target slot by slot."""
    if not _in_security_domain(s, cav_id, nct_id):
        raise SensingGeometryError(f"NCT {nct_id} is outside the security domain of CAV {cav_id}")
    if space_receipt is None or freq_receipt is None:
        return _sense(s, AWS, nct_id, 0, params, (), (), rng)
    _check_receipt(pool, space_receipt, SPACE, cav_id)
    _check_receipt(pool, freq_receipt, FREQ, cav_id)
    space_cells = pool.receipt(space_receipt).request.cells
    freq_slots = {t for t, _ in pool.receipt(freq_receipt).request.cells}
    slots = sorted({t for t, _ in space_cells})
    if len(slots) != len(space_cells):
        raise SensingGeometryError("active sensing uses one beam sector per slot")
    for t, sector in space_cells:
        snap = _snapshot_at(s, t, params)
        want = sector_of(bearing(snap.cav(cav_id).position, snap.nct(nct_id).position),
                         s.angle_sectors)
        if sector != want:
            raise SensingGeometryError(
                f"slot {t}: beam sector {sector} does not cover NCT {nct_id} (sector {want})")
    if freq_slots != set(slots):
        raise SensingGeometryError(
            f"frequency slots {sorted(freq_slots)} do not match beam slots {slots}")
    return _sense(s, AWS, nct_id, len(slots), params, (space_receipt, freq_receipt), slots, rng)


def comm_link_of(pool: TwinResourcePool, comm_receipt: int):
    """The communication link a (possibly shared) freq receipt rides on."""
    receipt = pool.receipt(comm_receipt)
    req = receipt.request
    if req.pool_kind != FREQ:
        raise DependencyError(f"receipt {comm_receipt} is not a frequency allocation")
    if req.share_with is not None:
        if req.share_with not in pool.receipts:
            raise DependencyError(f"link {req.share_with} behind receipt {comm_receipt} is gone")
        receipt = pool.receipt(req.share_with)
    if receipt.request.peer is None:
        raise DependencyError(f"receipt {comm_receipt} is not a communication link")
    return receipt


def pws_sense(s: Scenario, pool: TwinResourcePool, cav_id: int, nct_id: int,
              comm_receipt: int, params: ProcessParams,
              rng: np.random.Generator | None = None) -> SensingResult:
    """Passive sensing on the echoes of a live CAV -> RSU communication link."""
    if not _in_security_domain(s, cav_id, nct_id):
        raise SensingGeometryError(f"NCT {nct_id} is outside the security domain of CAV {cav_id}")
    if comm_receipt not in pool.receipts:
        raise DependencyError(f"no live communication allocation {comm_receipt}")
    _check_receipt(pool, comm_receipt, FREQ, cav_id)
    link = comm_link_of(pool, comm_receipt)
    rsu = s.rsu(link.request.peer)
    slots = sorted({t for t, _ in pool.receipt(comm_receipt).request.cells})
    for t in slots:
        snap = _snapshot_at(s, t, params)
        here = snap.cav(cav_id).position
        gap = angular_distance(bearing(here, rsu.position), bearing(here, snap.nct(nct_id).position))
        if gap > params.theta_tol:
            raise RegionRestrictionError(
                f"slot {t}: NCT {nct_id} is {gap:.2f} deg off the link toward RSU {rsu.id} "
                f"(tolerance {params.theta_tol})")
    return _sense(s, PWS, nct_id, len(slots), params, (comm_receipt,), slots, rng)


def comm_transfer(s: Scenario, pool: TwinResourcePool, cav_id: int, rsu_id: int,
                  freq_receipt: int, data_volume: float, params: ProcessParams) -> float:
    """Upload up to ``r0`` data units per allocated cell; returns what got through."""
    s.rsu(rsu_id)
    _check_receipt(pool, freq_receipt, FREQ, cav_id)
    req = pool.receipt(freq_receipt).request
    if req.peer is not None and req.peer != rsu_id:
        raise OwnershipError(f"receipt {freq_receipt} is a link toward RSU {req.peer}, not {rsu_id}")
    capacity = params.r0 * len(req.cells)
    return min(capacity, max(data_volume, 0.0))


def compute_required(volume: float, params: ProcessParams) -> int:
    # rounding guard: 5.25 * 1.0 must not become 5.250000000001 -> 6 by accident
    return int(math.ceil(round(params.c_per_unit * volume, 9)))


def compute_extract(sr: SensingResult, pool: TwinResourcePool, compute_receipt: int | None,
                    site: tuple, info_value: float, params: ProcessParams,
                    contract_id: int | None = None) -> InformationRecord:
    """Extract information from sensing data with the cells of one compute receipt.

    False-alarm data costs compute but carries no information.
    """
    cells = 0
    if compute_receipt is not None:
        _check_receipt(pool, compute_receipt, COMPUTE, site)
        cells = len(pool.receipt(compute_receipt).request.cells)
    required = compute_required(sr.raw_volume, params)
    fraction = 1.0 if required == 0 else min(1.0, cells / required)
    label = "local" if site[0] == "cav" else "edge"
    return InformationRecord(sr.target_id, fraction * sr.quality * info_value, label, contract_id)


def fuse_information(records: Iterable[InformationRecord]) -> dict[int, float]:
    """Per-target maximum; duplicate observations of a target do not add up."""
    fused: dict[int, float] = {}
    for r in records:
        fused[r.target_id] = max(fused.get(r.target_id, 0.0), r.info)
    return fused


def scale_result(sr: SensingResult, share: float) -> SensingResult:
    """The part of a sensing result that reached a remote site."""
    return replace(sr, data_volume=sr.data_volume * share,
                   false_alarm_volume=sr.false_alarm_volume * share)
