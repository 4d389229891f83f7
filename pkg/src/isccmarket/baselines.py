"""Non-learning allocators: uniform random, greedy, and an exhaustive oracle.

Every allocator takes ``(s, pool, demand, ...)``, forms its contracts on
``pool`` and returns ``(order, contracts)``; the oracle also reports the
optimal net profit and its choice vector.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .config import EXPECTED, ProcessParams
from .errors import SizeError
from .market import (QUALITY_EPS, DemandProfile, EmploymentContract, InformationOrder,
                     OrderLine, Template, enumerate_templates, execute_round, realize,
                     release_contract, settle)
from .process_models import PWS, detection_quality
from .resource_pool import TwinResourcePool
from .scenario import Scenario

MAX_TARGETS = 6
MAX_TEMPLATES = 12


def ladder_level(ladder, quality: float) -> int:
    """Highest ladder index whose level the quality reaches."""
    level = 0
    for i, q in enumerate(ladder):
        if q <= quality + QUALITY_EPS:
            level = i
    return level


def expected_payment(demand: DemandProfile, target: int, tpl: Template, info_value: float) -> float:
    total = 0.0
    for buyer in demand.buyers_of(target):
        terms = demand.terms(buyer, target)
        if tpl.quality >= terms.q_min - QUALITY_EPS and tpl.expected_info > 0:
            total += terms.unit_price * min(tpl.expected_info, info_value)
    return total


def _probe_line(demand: DemandProfile, target: int, ladder) -> OrderLine:
    buyers = tuple(demand.buyers_of(target))
    return OrderLine(target, ladder[1] if len(ladder) > 1 else 0.0, buyers, not buyers)


def _order_from(lines: dict[int, OrderLine]) -> InformationOrder:
    return InformationOrder(tuple(lines[t] for t in sorted(lines)))


def random_allocator(seed: int, s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                     params: ProcessParams | None = None):
    """Uniform ladder level per demanded target, then a uniform feasible template per line."""
    params = params or s.process
    rng = np.random.default_rng(seed)
    ladder = s.market.ladder
    lines = []
    for target in demand.targets():
        level = int(rng.integers(len(ladder)))
        if level:
            buyers = tuple(demand.buyers_of(target))
            lines.append(OrderLine(target, ladder[level], buyers, not buyers))
    order = InformationOrder(tuple(lines))
    contracts = []
    for line in order.lines:
        templates = enumerate_templates(s, pool, line, params)
        if not templates:
            continue
        tpl = templates[int(rng.integers(len(templates)))]
        contracts.append(realize(pool, tpl, len(contracts), line.q_ord))
    return order, contracts


def greedy_allocator(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                     params: ProcessParams | None = None):
    """Most valuable targets first, each with its cheapest template per sold unit.

    Targets are ranked by total demand price times information value. A
    target is served by the template with the lowest incremental cost per
    expected sold information unit (passive sensing wins ties) and skipped
    when the expected payment does not cover that cost.
    """
    params = params or s.process
    ladder = s.market.ladder

    def value(t):
        price = sum(demand.terms(b, t).unit_price for b in demand.buyers_of(t))
        return price * s.nct(t).info_value

    lines: dict[int, OrderLine] = {}
    contracts: list[EmploymentContract] = []
    for target in sorted(demand.targets(), key=lambda t: (-value(t), t)):
        probe = _probe_line(demand, target, ladder)
        info_value = s.nct(target).info_value
        best, best_key = None, None
        for idx, tpl in enumerate(enumerate_templates(s, pool, probe, params)):
            pay = expected_payment(demand, target, tpl, info_value)
            if pay <= 0:
                continue
            key = (tpl.cost / tpl.expected_info, 0 if tpl.mode == PWS else 1, idx)
            if best_key is None or key < best_key:
                best, best_key = (tpl, pay), key
        if best is None:
            continue
        tpl, pay = best
        if pay < tpl.cost:
            continue
        level = ladder_level(ladder, tpl.quality)
        lines[target] = replace(probe, q_ord=ladder[level])
        contracts.append(realize(pool, tpl, len(contracts), ladder[level]))
    return _order_from(lines), contracts


@dataclass
class OracleResult:
    net: float
    choices: tuple[int, ...]
    targets: tuple[int, ...]
    order: InformationOrder
    contracts: list[EmploymentContract]
    nodes: int = 0
    # pool holding ``contracts``
    pool: TwinResourcePool | None = None


def _expected(params: ProcessParams) -> ProcessParams:
    return params if params.mode == EXPECTED else replace(params, mode=EXPECTED)


def _form(s, pool, demand, targets, choices, params):
    """Form contracts for a choice vector on ``pool``; None if a choice is infeasible."""
    ladder = s.market.ladder
    lines, contracts = {}, []
    for target, choice in zip(targets, choices):
        if choice < 0:
            continue
        probe = _probe_line(demand, target, ladder)
        templates = enumerate_templates(s, pool, probe, params)
        if choice >= len(templates):
            return None
        tpl = templates[choice]
        level = ladder[ladder_level(ladder, tpl.quality)]
        lines[target] = replace(probe, q_ord=level)
        contracts.append(realize(pool, tpl, len(contracts), level))
    return _order_from(lines), contracts


def evaluate_choices(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                     choices, params: ProcessParams | None = None):
    """Net profit of a per-target choice vector, simulated on a copy of ``pool``."""
    params = _expected(params or s.process)
    work = pool.copy()
    targets = demand.targets()
    formed = _form(s, work, demand, targets, choices, params)
    if formed is None:
        return None
    order, contracts = formed
    report = execute_round(s, work, contracts, params, order)
    return settle(demand, report, s.market.ladder).net_profit


def _check_caps(demand, caps):
    max_targets, _ = caps
    if len(demand.targets()) > max_targets:
        raise SizeError(f"{len(demand.targets())} demanded targets exceed the cap of {max_targets}")


def exhaustive_optimal(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                       params: ProcessParams | None = None,
                       caps: tuple[int, int] = (MAX_TARGETS, MAX_TEMPLATES),
                       prune: bool = True) -> OracleResult:
    """Exact maximizer of net profit over per-target template choices.

    Depth-first over demanded targets in id order; each target is skipped
    (choice -1) or served by one template of the list enumerated against the
    pool at that point. A branch is cut when its exact partial net plus the
    most any remaining target could earn cannot beat the incumbent. Among
    equal optima the lexicographically smallest choice vector wins.
    ``pool`` itself is left untouched; the winning contracts are formed on a
    copy, available as ``result.contracts``.
    """
    params = _expected(params or s.process)
    _check_caps(demand, caps)
    max_templates = caps[1]
    targets = demand.targets()
    ladder = s.market.ladder
    q_top = max(detection_quality(params.p_aws, 2), detection_quality(params.p_pws, 2))

    def optimistic(t):
        value = s.nct(t).info_value
        return sum(demand.terms(b, t).unit_price for b in demand.buyers_of(t)) * q_top * value

    tail = [0.0] * (len(targets) + 1)
    for i in range(len(targets) - 1, -1, -1):
        tail[i] = tail[i + 1] + optimistic(targets[i])

    work = pool.copy()
    best = {"net": None, "choices": None}
    stats = {"nodes": 0}
    formed: list[EmploymentContract] = []
    lines: dict[int, OrderLine] = {}

    def leaf(choices):
        report = execute_round(s, work, formed, params, _order_from(lines))
        net = settle(demand, report, ladder).net_profit
        if best["net"] is None or net > best["net"]:
            best["net"], best["choices"] = net, tuple(choices)

    def dfs(i, choices, partial):
        stats["nodes"] += 1
        if i == len(targets):
            leaf(choices)
            return
        if prune and best["net"] is not None and partial + tail[i] < best["net"] - 1e-9:
            return
        target = targets[i]
        probe = _probe_line(demand, target, ladder)
        templates = enumerate_templates(s, work, probe, params)
        if len(templates) > max_templates:
            raise SizeError(f"target {target} has {len(templates)} templates (cap {max_templates})")
        dfs(i + 1, choices + [-1], partial)
        info_value = s.nct(target).info_value
        for j, tpl in enumerate(templates):
            gain = expected_payment(demand, target, tpl, info_value) - tpl.cost
            level = ladder[ladder_level(ladder, tpl.quality)]
            lines[target] = replace(probe, q_ord=level)
            contract = realize(work, tpl, len(formed), level)
            formed.append(contract)
            dfs(i + 1, choices + [j], partial + gain)
            formed.pop()
            release_contract(work, contract)
            del lines[target]

    dfs(0, [], 0.0)
    final = pool.copy()
    order, contracts = _form(s, final, demand, targets, best["choices"], params)
    return OracleResult(best["net"], best["choices"], tuple(targets), order, contracts,
                        stats["nodes"], final)


def brute_force_optimal(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                        params: ProcessParams | None = None):
    """Unpruned reference: every complete choice vector re-simulated from scratch.

    Slow on purpose; it shares no search state with ``exhaustive_optimal``.
    """
    params = _expected(params or s.process)
    targets = demand.targets()
    ladder = s.market.ladder
    prefixes = [()]
    for i, target in enumerate(targets):
        grown = []
        for prefix in prefixes:
            work = pool.copy()
            if _form(s, work, demand, targets[:i], prefix, params) is None:
                continue
            n = len(enumerate_templates(s, work, _probe_line(demand, target, ladder), params))
            grown.extend(prefix + (c,) for c in itertools.chain([-1], range(n)))
        prefixes = grown
    best_net, best_choices = None, None
    for choices in prefixes:
        net = evaluate_choices(s, pool, demand, choices, params)
        if net is not None and (best_net is None or net > best_net):
            best_net, best_choices = net, choices
    return best_net, best_choices
