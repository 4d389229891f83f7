"""Information-oriented resource trading platform.

One market round runs

    publish_demand -> place_order -> form_contracts -> execute_round -> settle

Buyers (employer CAVs) demand information about the NCTs in their security
domain. The distributor turns demand into an information order (target,
ordered quality). The purchaser satisfies each order line with one contract
template, i.e. a concrete plan of pool cells on some employee CAV.
Settlement sells the fused information to every demanding buyer that accepts
its quality; resource cost is the weighted count of newly consumed cells.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import BuyerTerms, MarketConfig, ProcessParams
from .errors import AllocationConflict, DecisionError, IsccError
from .process_models import (AWS, PWS, InformationRecord, SensingResult, aws_sense,
                             comm_transfer, compute_extract, compute_required,
                             detection_quality, fuse_information, pws_sense, scale_result)
from .resource_pool import (COMPUTE, FREQ, SPACE, TD, BlockRequest, TwinResourcePool,
                            cav_site, rsu_site)
from .scenario import (Scenario, angular_distance, bearing, nearest_rsu, sector_of,
                       step_mobility, visible_targets)

QUALITY_EPS = 1e-9
SLOT_CHOICES = (1, 2)


# -- demand and orders ------------------------------------------------------

@dataclass(frozen=True)
class DemandProfile:
    # buyer CAV id -> target id -> terms
    entries: Mapping[int, Mapping[int, BuyerTerms]]

    def targets(self) -> list[int]:
        return sorted({t for per in self.entries.values() for t in per})

    def buyers_of(self, target: int) -> list[int]:
        return sorted(b for b, per in self.entries.items() if target in per)

    def terms(self, buyer: int, target: int) -> BuyerTerms:
        return self.entries[buyer][target]

    def is_empty(self) -> bool:
        return not any(self.entries.values())


def publish_demand(s: Scenario, pricing: MarketConfig | None = None) -> DemandProfile:
    """Every CAV demands every NCT inside its security domain."""
    pricing = pricing or s.market
    entries = {}
    for cav in s.cavs:
        seen = visible_targets(s, cav.id)
        if seen:
            terms = pricing.terms(cav.id)
            entries[cav.id] = {t: terms for t in sorted(seen)}
    return DemandProfile(entries)


@dataclass(frozen=True)
class OrderLine:
    target: int
    q_ord: float
    buyers: tuple[int, ...] = ()
    speculative: bool = False


@dataclass(frozen=True)
class InformationOrder:
    lines: tuple[OrderLine, ...] = ()

    def line(self, target: int) -> OrderLine | None:
        for ln in self.lines:
            if ln.target == target:
                return ln
        return None


def place_order(demand: DemandProfile, distributor_decision: Mapping[int, int],
                ladder: Sequence[float] = MarketConfig.ladder,
                known_targets: Iterable[int] | None = None) -> InformationOrder:
    """Build the order from ``{target id: ladder index}``; index 0 means skip.

    Targets nobody demands may still be ordered; their lines are flagged
    speculative.
    """
    known = set(known_targets) if known_targets is not None else None
    lines = []
    for target, level in sorted(distributor_decision.items()):
        if not isinstance(level, (int, np.integer)) or not 0 <= level < len(ladder):
            raise DecisionError(f"target {target}: ladder index {level!r} out of range")
        if known is not None and target not in known:
            raise DecisionError(f"unknown target {target}")
        if level == 0:
            continue
        buyers = tuple(demand.buyers_of(target))
        lines.append(OrderLine(int(target), float(ladder[level]), buyers, not buyers))
    return InformationOrder(tuple(lines))


# -- templates ----------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    """A feasible way to produce one order line, planned against a pool state."""

    target: int
    employee: int
    employer: int
    rsu: int | None
    mode: str
    slots: int
    site: tuple
    requests: tuple[tuple[str, BlockRequest], ...]
    quality: float
    expected_info: float
    cost: float

    @property
    def sort_key(self):
        site_key = (0, -1) if self.site[0] == "cav" else (1, self.site[1])
        return (self.employee, self.mode, self.slots, site_key)

    @property
    def label(self) -> str:
        where = "local" if self.site[0] == "cav" else f"rsu{self.site[1]}"
        return f"cav{self.employee}/{self.mode}/{self.slots}/{where}"

    def cells(self) -> set[tuple]:
        return {(req.grid, t, o) for _, req in self.requests for t, o in req.cells}


def _cost(pool: TwinResourcePool, requests) -> float:
    return sum((pool.weights[req.pool_kind] * len(req.cells)
                for _, req in requests if req.share_with is None), 0.0)


def _sector_at(s: Scenario, params: ProcessParams, slot: int, cav_id: int, pos_of) -> int:
    snap = s if params.slot_seconds == 0 or slot == 0 else step_mobility(s, slot * params.slot_seconds)
    return sector_of(bearing(snap.cav(cav_id).position, pos_of(snap)), s.angle_sectors)


def _first_free_freq(pool: TwinResourcePool, t: int, skip=()) -> int | None:
    F = pool.shapes[(FREQ, TD)][1]
    for f in range(F):
        if (t, f) not in skip and pool.is_free((FREQ, TD), (t, f)):
            return f
    return None


def _plan_compute(pool: TwinResourcePool, site: tuple, start: int, required: int):
    if required == 0:
        return []
    grid = (COMPUTE, site)
    T, W = pool.shapes[grid]
    picked = []
    for t in range(start, T):
        for o in range(W):
            if pool.is_free(grid, (t, o)):
                picked.append((t, o))
                if len(picked) == required:
                    return picked
    return None


def _plan_aws_sensing(s, pool, params, employee, target, n):
    space_grid = (SPACE, employee)
    space_cells, freq_cells = [], []
    for t in range(s.time_horizon):
        sector = _sector_at(s, params, t, employee, lambda snap: snap.nct(target).position)
        if not pool.is_free(space_grid, (t, sector)):
            continue
        f = _first_free_freq(pool, t)
        if f is None:
            continue
        space_cells.append((t, sector))
        freq_cells.append((t, f))
        if len(space_cells) == n:
            return space_cells, freq_cells
    return None


def _plan_comm(s, pool, params, employee, rsu, start, volume):
    """One beam and one subcarrier per slot toward the RSU."""
    k = int(math.ceil(round(volume / params.r0, 9)))
    if k == 0:
        return [], []
    space_grid = (SPACE, employee)
    space_cells, freq_cells = [], []
    for t in range(start, s.time_horizon):
        sector = _sector_at(s, params, t, employee, lambda snap: snap.rsu(rsu).position)
        if not pool.is_free(space_grid, (t, sector)):
            continue
        f = _first_free_freq(pool, t)
        if f is None:
            continue
        space_cells.append((t, sector))
        freq_cells.append((t, f))
        if len(space_cells) == k:
            return space_cells, freq_cells
    return None


def _link_space_receipt(pool, employee, rsu, slots):
    for rid, r in sorted(pool.receipts.items()):
        req = r.request
        if (req.pool_kind == SPACE and req.owner == employee and req.peer == rsu
                and req.share_with is None and slots <= {t for t, _ in req.cells}):
            return rid
    return None


def _plan_pws(s, pool, params, employee, target, n):
    """Share the first ``n`` slots of a suitable live link; None if there is none."""
    for link in pool.comm_links(employee):
        rsu = link.request.peer
        link_slots = sorted({t for t, _ in link.request.cells})
        if len(link_slots) < n:
            continue
        slots = link_slots[:n]
        ok = True
        for t in slots:
            snap = s if params.slot_seconds == 0 or t == 0 else step_mobility(s, t * params.slot_seconds)
            here = snap.cav(employee).position
            gap = angular_distance(bearing(here, snap.rsu(rsu).position),
                                   bearing(here, snap.nct(target).position))
            if gap > params.theta_tol:
                ok = False
                break
        if not ok:
            continue
        space_rid = _link_space_receipt(pool, employee, rsu, set(slots))
        if space_rid is None:
            continue
        space_cells = [c for c in pool.receipt(space_rid).request.cells if c[0] in slots]
        freq_cells = [c for c in link.request.cells if c[0] in slots]
        return rsu, space_rid, space_cells, link.receipt_id, freq_cells
    return None


def enumerate_templates(s: Scenario, pool: TwinResourcePool, order_line: OrderLine,
                        params: ProcessParams | None = None) -> list[Template]:
    """All feasible (employee, mode, slots, site) plans for one order line.

    Feasibility covers geometry (target in the employee's security domain,
    beam sector coverage, passive-sensing angular tolerance), free pool
    capacity, and expected quality reaching the ordered level. The list is
    sorted by employee, mode, slot count and site (local before edge).
    """
    params = params or s.process
    target = order_line.target
    try:
        info_value = s.nct(target).info_value
    except IsccError:
        return []
    out = []
    for cav in s.cavs:
        e = cav.id
        if target not in visible_targets(s, e):
            continue
        if not order_line.buyers or e in order_line.buyers:
            employer = e
        else:
            employer = order_line.buyers[0]
        relay = None if employer == e else nearest_rsu(s, e)
        if employer != e and relay is None:
            continue

        for n in SLOT_CHOICES:
            q = detection_quality(params.p_aws, n)
            if q < order_line.q_ord - QUALITY_EPS:
                continue
            sensing = _plan_aws_sensing(s, pool, params, e, target, n)
            if sensing is None:
                continue
            space_cells, freq_cells = sensing
            last = space_cells[-1][0]
            raw = params.d0 * n * (1.0 + params.p_fa)
            need = compute_required(raw, params)
            base = (("sense_space", BlockRequest(SPACE, e, frozenset(space_cells))),
                    ("sense_freq", BlockRequest(FREQ, e, frozenset(freq_cells))))
            sites = [cav_site(e)] + [rsu_site(r) for r in sorted(s.rsu_ids)]
            for site in sites:
                if site[0] == "cav":
                    if need and pool.shapes[(COMPUTE, site)][1] == 0:
                        continue
                    compute = _plan_compute(pool, site, last + 1, need)
                    if compute is None:
                        continue
                    reqs = base
                    rsu = relay
                else:
                    comm = _plan_comm(s, pool, params, e, site[1], last + 1, raw)
                    if comm is None:
                        continue
                    comm_space, comm_freq = comm
                    start = comm_space[-1][0] + 1 if comm_space else last + 1
                    compute = _plan_compute(pool, site, start, need)
                    if compute is None:
                        continue
                    reqs = base
                    if comm_space:
                        reqs = reqs + (
                            ("comm_space", BlockRequest(SPACE, e, frozenset(comm_space), peer=site[1])),
                            ("comm_freq", BlockRequest(FREQ, e, frozenset(comm_freq), peer=site[1])))
                    rsu = site[1]
                if compute:
                    reqs = reqs + (("compute", BlockRequest(COMPUTE, site, frozenset(compute))),)
                out.append(Template(target, e, employer, rsu, AWS, n, site, reqs, q,
                                    q * info_value, _cost(pool, reqs)))

        for n in SLOT_CHOICES:
            q = detection_quality(params.p_pws, n)
            if q < order_line.q_ord - QUALITY_EPS:
                continue
            shared = _plan_pws(s, pool, params, e, target, n)
            if shared is None:
                continue
            _, space_rid, space_cells, freq_rid, freq_cells = shared
            need = compute_required(params.d0 * n * (1.0 + params.p_fa), params)
            site = cav_site(e)
            if need and pool.shapes[(COMPUTE, site)][1] == 0:
                continue
            last = max(t for t, _ in space_cells)
            compute = _plan_compute(pool, site, last + 1, need)
            if compute is None:
                continue
            reqs = (("sense_space", BlockRequest(SPACE, e, frozenset(space_cells), share_with=space_rid)),
                    ("sense_freq", BlockRequest(FREQ, e, frozenset(freq_cells), share_with=freq_rid)))
            if compute:
                reqs = reqs + (("compute", BlockRequest(COMPUTE, site, frozenset(compute))),)
            out.append(Template(target, e, employer, relay, PWS, n, site, reqs, q,
                                q * info_value, _cost(pool, reqs)))
    out.sort(key=lambda tpl: tpl.sort_key)
    return out


# -- contracts ----------------------------------------------------------------

@dataclass
class EmploymentContract:
    contract_id: int
    employer: int
    employee: int
    rsu: int | None
    target: int
    mode: str
    slots: int
    site: tuple
    receipts: dict[str, int]
    q_ord: float = 0.0
    produced: InformationRecord | None = None

    @property
    def self_employment(self) -> bool:
        return self.employer == self.employee and self.rsu is None

    @property
    def cavs(self) -> set[int]:
        return {self.employer, self.employee}


def realize(pool: TwinResourcePool, template: Template, contract_id: int,
            q_ord: float = 0.0) -> EmploymentContract:
    """Allocate a template's requests; all or nothing."""
    receipts: dict[str, int] = {}
    try:
        for role, req in template.requests:
            receipts[role] = pool.allocate(req).receipt_id
    except IsccError:
        for rid in reversed(list(receipts.values())):
            pool.release(rid)
        raise
    return EmploymentContract(contract_id, template.employer, template.employee, template.rsu,
                              template.target, template.mode, template.slots, template.site,
                              receipts, q_ord)


def release_contract(pool: TwinResourcePool, contract: EmploymentContract) -> None:
    for rid in reversed(list(contract.receipts.values())):
        pool.release(rid)


@dataclass(frozen=True)
class SkippedLine:
    target: int
    reason: str


def form_contracts(s: Scenario, pool: TwinResourcePool, order: InformationOrder,
                   purchaser_decision: Sequence[int | None], params: ProcessParams | None = None,
                   first_id: int = 0):
    """Turn order lines into contracts, one line at a time.

    ``purchaser_decision[i]`` indexes the template list enumerated for line
    ``i`` against the pool as it stands after lines ``0..i-1``; ``None``
    leaves the line unserved. Returns ``(contracts, skipped)``.
    """
    params = params or s.process
    if len(purchaser_decision) != len(order.lines):
        raise DecisionError(
            f"{len(purchaser_decision)} purchaser decisions for {len(order.lines)} order lines")
    contracts, skipped = [], []
    for line, choice in zip(order.lines, purchaser_decision):
        if choice is None:
            skipped.append(SkippedLine(line.target, "no template chosen"))
            continue
        templates = enumerate_templates(s, pool, line, params)
        if not 0 <= choice < len(templates):
            skipped.append(SkippedLine(line.target, f"template {choice} of {len(templates)} not feasible"))
            continue
        try:
            contracts.append(realize(pool, templates[choice], first_id + len(contracts), line.q_ord))
        except AllocationConflict as exc:
            skipped.append(SkippedLine(line.target, f"allocation conflict: {exc}"))
    return contracts, skipped


# -- execution ----------------------------------------------------------------

@dataclass
class ContractOutcome:
    contract_id: int
    target: int
    sensing: SensingResult | None
    transferred: float
    record: InformationRecord | None
    cost: float
    cells: frozenset
    error: str | None = None


@dataclass
class ExecutionReport:
    outcomes: list[ContractOutcome] = field(default_factory=list)
    target_values: dict[int, float] = field(default_factory=dict)
    order: InformationOrder = field(default_factory=InformationOrder)

    @property
    def total_cost(self) -> float:
        return sum((o.cost for o in self.outcomes), 0.0)

    @property
    def records(self) -> list[InformationRecord]:
        return [o.record for o in self.outcomes if o.record is not None]

    def outcome(self, contract_id: int) -> ContractOutcome:
        for o in self.outcomes:
            if o.contract_id == contract_id:
                return o
        raise KeyError(contract_id)


def contract_cells(pool: TwinResourcePool, contract: EmploymentContract) -> frozenset:
    cells = set()
    for rid in contract.receipts.values():
        cells |= pool.receipt_cells(rid)
    return frozenset(cells)


def execute_round(s: Scenario, pool: TwinResourcePool, contracts: Sequence[EmploymentContract],
                  params: ProcessParams | None = None, order: InformationOrder | None = None,
                  rng: np.random.Generator | None = None) -> ExecutionReport:
    """Run sensing, optional upload and extraction for each contract.

    Each contract is charged the weighted cost of the cells it newly
    allocated; cells it shares cost nothing (the first owner paid for them).
    Process errors are recorded on the contract's outcome and the round goes on.
    """
    params = params or s.process
    report = ExecutionReport(target_values={t.id: t.info_value for t in s.ncts},
                             order=order or InformationOrder())
    for c in sorted(contracts, key=lambda c: c.contract_id):
        cost = sum((pool.receipt(rid).weighted_cost for rid in c.receipts.values()), 0.0)
        cells = contract_cells(pool, c)
        sr, transferred, record, error = None, 0.0, None, None
        try:
            if c.mode == AWS:
                sr = aws_sense(s, pool, c.employee, c.target, c.receipts.get("sense_space"),
                               c.receipts.get("sense_freq"), params, rng)
            else:
                sr = pws_sense(s, pool, c.employee, c.target, c.receipts["sense_freq"], params, rng)
            info_value = s.nct(c.target).info_value
            if c.site[0] == "rsu":
                raw = sr.raw_volume
                if "comm_freq" in c.receipts:
                    transferred = comm_transfer(s, pool, c.employee, c.site[1],
                                                c.receipts["comm_freq"], raw, params)
                share = 1.0 if raw == 0 else transferred / raw
                record = compute_extract(scale_result(sr, share), pool, c.receipts.get("compute"),
                                         c.site, info_value, params, c.contract_id)
                if share < 1.0:
                    record = InformationRecord(record.target_id, record.info * share,
                                               record.site, record.contract_id)
            else:
                record = compute_extract(sr, pool, c.receipts.get("compute"), c.site, info_value,
                                         params, c.contract_id)
        except IsccError as exc:
            error = f"{type(exc).__name__}: {exc}"
            record = None
        c.produced = record
        report.outcomes.append(ContractOutcome(c.contract_id, c.target, sr, transferred, record,
                                               cost, cells, error))
    return report


# -- settlement ---------------------------------------------------------------

@dataclass
class TransactionLedger:
    gross_income: float = 0.0
    resource_cost: float = 0.0
    net_profit: float = 0.0
    payments: dict[int, float] = field(default_factory=dict)
    payment_lines: list[tuple[int, int, float]] = field(default_factory=list)
    contract_costs: dict[int, float] = field(default_factory=dict)
    fused_info: dict[int, float] = field(default_factory=dict)
    sold_counts: dict[int, int] = field(default_factory=dict)
    unsold_info: dict[int, float] = field(default_factory=dict)
    unfulfilled: list[int] = field(default_factory=list)

    @property
    def produced_info(self) -> float:
        return sum(self.fused_info.values(), 0.0)

    @property
    def sold_info(self) -> float:
        return sum((v for t, v in self.fused_info.items() if self.sold_counts.get(t, 0) > 0), 0.0)

    @property
    def resold_info(self) -> float:
        return sum((v for t, v in self.fused_info.items() if self.sold_counts.get(t, 0) > 1), 0.0)

    @property
    def hit_rate(self) -> float:
        produced = self.produced_info
        return self.sold_info / produced if produced > 0 else 0.0

    @property
    def reuse_rate(self) -> float:
        sold = self.sold_info
        return self.resold_info / sold if sold > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "gross_income": self.gross_income,
            "resource_cost": self.resource_cost,
            "net_profit": self.net_profit,
            "payments": {str(k): v for k, v in sorted(self.payments.items())},
            "payment_lines": [list(x) for x in self.payment_lines],
            "contract_costs": {str(k): v for k, v in sorted(self.contract_costs.items())},
            "fused_info": {str(k): v for k, v in sorted(self.fused_info.items())},
            "sold_counts": {str(k): v for k, v in sorted(self.sold_counts.items())},
            "unsold_info": {str(k): v for k, v in sorted(self.unsold_info.items())},
            "unfulfilled": list(self.unfulfilled),
            "produced_info": self.produced_info,
            "sold_info": self.sold_info,
            "hit_rate": self.hit_rate,
            "reuse_rate": self.reuse_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def settle(demand: DemandProfile, report: ExecutionReport,
           ladder: Sequence[float] | None = None) -> TransactionLedger:
    """Sell fused information to every demanding buyer whose quality floor it meets.

    Information is non-rival: the same fused amount sells to each buyer.
    Unfulfilled order lines carry no money here.
    """
    fused = fuse_information(report.records)
    ledger = TransactionLedger(fused_info=dict(sorted(fused.items())))
    for target, info in ledger.fused_info.items():
        value = report.target_values.get(target, 0.0)
        quality = info / value if value > 0 else 0.0
        count = 0
        for buyer in demand.buyers_of(target):
            terms = demand.terms(buyer, target)
            if quality >= terms.q_min - QUALITY_EPS and info > 0:
                amount = terms.unit_price * min(info, value)
                ledger.payments[buyer] = ledger.payments.get(buyer, 0.0) + amount
                ledger.payment_lines.append((buyer, target, amount))
                count += 1
        ledger.sold_counts[target] = count
        if count == 0:
            ledger.unsold_info[target] = info
    for line in report.order.lines:
        value = report.target_values.get(line.target, 0.0)
        got = fused.get(line.target, 0.0)
        if got < line.q_ord * value * (1 - QUALITY_EPS) or (line.target not in fused):
            ledger.unfulfilled.append(line.target)
    ledger.contract_costs = {o.contract_id: o.cost for o in report.outcomes}
    ledger.gross_income = sum((amount for _, _, amount in ledger.payment_lines), 0.0)
    ledger.resource_cost = report.total_cost
    ledger.net_profit = ledger.gross_income - ledger.resource_cost
    return ledger


SUMMARY_FIELDS = ("episode", "gross", "cost", "net", "hit_rate", "reuse_rate", "unfulfilled")


def summary_row(episode: int, ledger: TransactionLedger) -> dict:
    return {"episode": episode, "gross": ledger.gross_income, "cost": ledger.resource_cost,
            "net": ledger.net_profit, "hit_rate": ledger.hit_rate,
            "reuse_rate": ledger.reuse_rate, "unfulfilled": len(ledger.unfulfilled)}


def summary_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def run_round(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
              order: InformationOrder, contracts: Sequence[EmploymentContract],
              rng: np.random.Generator | None = None):
    """Execute and settle contracts already formed on ``pool``."""
    report = execute_round(s, pool, contracts, s.process, order, rng)
    return report, settle(demand, report, s.market.ladder)
