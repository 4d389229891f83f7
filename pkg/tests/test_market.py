import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from isccmarket.baselines import greedy_allocator, random_allocator
from isccmarket.config import BuyerTerms
from isccmarket.errors import DecisionError
from isccmarket.market import (DemandProfile, EmploymentContract, ExecutionReport, InformationOrder,
                               OrderLine, enumerate_templates, execute_round, form_contracts,
                               place_order, publish_demand, realize, run_round, settle,
                               summary_csv, summary_row)
from isccmarket.process_models import AWS, PWS, InformationRecord, detection_quality
from isccmarket.resource_pool import (COMPUTE, FREQ, SPACE, BlockRequest, cav_site, new_pool,
                                      rsu_site)
from isccmarket.scenario import visible_targets


def _unit_weights(s):
    return replace(s, market=replace(s.market, w_space=1.0, w_freq=1.0, w_compute=1.0))


def _report(records, values, order=()):
    rep = ExecutionReport(target_values=values, order=InformationOrder(tuple(order)))
    for r in records:
        rep.outcomes.append(_outcome(r))
    return rep


def _outcome(record):
    from isccmarket.market import ContractOutcome
    return ContractOutcome(record.contract_id or 0, record.target_id, None, 0.0, record, 0.0,
                           frozenset())


def _terms(price=1.0, q_min=0.5):
    return BuyerTerms(price, q_min)


def test_demand_tiny(tiny):
    demand = publish_demand(tiny)
    assert sorted(demand.entries[0]) == [0, 1]
    assert demand.targets() == [0, 1, 2, 3]
    assert demand.buyers_of(0) == [0, 1]
    assert demand.buyers_of(2) == [2]


def test_demand_without_targets(tiny):
    assert publish_demand(replace(tiny, ncts=())).is_empty()


def test_place_order(tiny):
    demand = publish_demand(tiny)
    assert place_order(demand, {0: 0, 1: 0}).lines == ()
    order = place_order(demand, {0: 2, 2: 1})
    assert [(ln.target, ln.q_ord, ln.buyers) for ln in order.lines] == [(0, 0.75, (0, 1)), (2, 0.5, (2,))]
    spec = place_order(DemandProfile({0: {1: _terms()}}), {3: 1})
    assert spec.lines[0].speculative
    with pytest.raises(DecisionError):
        place_order(demand, {0: 3})
    with pytest.raises(DecisionError):
        place_order(demand, {9: 1}, known_targets=[0, 1, 2, 3])


def test_speculative_line_goes_unsold(tiny):
    demand = DemandProfile({0: {1: _terms()}})
    order = place_order(demand, {0: 1})
    pool = new_pool(tiny)
    templates = enumerate_templates(tiny, pool, order.lines[0])
    contracts, skipped = form_contracts(tiny, pool, order, [0])
    assert templates and not skipped
    _, ledger = run_round(tiny, pool, demand, order, contracts)
    assert ledger.gross_income == 0.0
    assert ledger.unsold_info[0] > 0
    assert ledger.net_profit == -ledger.resource_cost


def _brute_templates(s, line):
    """Feasible (employee, mode, slots, site) tuples on a fresh pool, counted by hand."""
    p, T = s.process, s.time_horizon
    out = []
    for cav in s.cavs:
        if line.target not in visible_targets(s, cav.id):
            continue
        for n in (1, 2):
            if detection_quality(p.p_aws, n) < line.q_ord:
                continue
            raw = p.d0 * n * (1 + p.p_fa)
            need = math.ceil(round(p.c_per_unit * raw, 9))
            if cav.local_compute_units * (T - n) >= need:
                out.append((cav.id, AWS, n, "local"))
            for rsu in s.rsus:
                k = math.ceil(round(raw / p.r0, 9))
                if rsu.edge_compute_units * (T - n - k) >= need:
                    out.append((cav.id, AWS, n, f"rsu{rsu.id}"))
        # no communication link exists yet, so no passive option
    return out


@pytest.mark.parametrize("q_ord", [0.5, 0.75])
def test_templates_match_brute_force(tiny, q_ord):
    line = OrderLine(0, q_ord, (0, 1))
    got = [(t.employee, t.mode, t.slots, "local" if t.site[0] == "cav" else f"rsu{t.site[1]}")
           for t in enumerate_templates(tiny, new_pool(tiny), line)]
    assert got == _brute_templates(tiny, line)
    assert got


def test_no_templates_for_unseen_target(tiny):
    lone = replace(tiny.nct(3), position=(-90.0, 40.0))
    s = replace(tiny, ncts=tiny.ncts[:3] + (lone,))
    assert enumerate_templates(s, new_pool(s), OrderLine(3, 0.5)) == []
    assert enumerate_templates(tiny, new_pool(tiny), OrderLine(42, 0.5)) == []


def test_passive_needs_a_link(tiny):
    pool = new_pool(tiny)
    line = OrderLine(1, 0.0, (0, 1))
    assert all(t.mode == AWS for t in enumerate_templates(tiny, pool, line))
    edge = [t for t in enumerate_templates(tiny, pool, OrderLine(0, 0.5, (0, 1)))
            if t.employee == 0 and t.site == rsu_site(0)][0]
    realize(pool, edge, 0)
    passive = [t for t in enumerate_templates(tiny, pool, line) if t.mode == PWS]
    assert passive and all(t.employee == 0 and t.site == cav_site(0) for t in passive)


def test_cost_fourteen(tiny):
    s = _unit_weights(tiny)
    s = replace(s, process=replace(s.process, p_fa=0.0))
    pool = new_pool(s)
    compute = sorted((t, o) for t in range(2, 8) for o in range(3))[:10]
    rid = {
        "sense_space": pool.allocate(BlockRequest(SPACE, 0, {(0, 0), (1, 0)})).receipt_id,
        "sense_freq": pool.allocate(BlockRequest(FREQ, 0, {(0, 0), (1, 0)})).receipt_id,
        "compute": pool.allocate(BlockRequest(COMPUTE, cav_site(0), set(compute))).receipt_id,
    }
    c = EmploymentContract(0, 0, 0, None, 1, AWS, 2, cav_site(0), rid, 0.75)
    assert c.self_employment
    report = execute_round(s, pool, [c])
    assert report.total_cost == 14.0
    assert report.outcomes[0].record.info == 0.75 * 16.0
    assert execute_round(s, pool, []).total_cost == 0.0


def test_one_slot_contract_receipts(tiny):
    pool = new_pool(tiny)
    order = place_order(publish_demand(tiny), {1: 1})
    templates = enumerate_templates(tiny, pool, order.lines[0])
    pick = next(i for i, t in enumerate(templates)
                if (t.employee, t.mode, t.slots, t.site) == (0, AWS, 1, cav_site(0)))
    contracts, skipped = form_contracts(tiny, pool, order, [pick])
    assert not skipped
    kinds = sorted(pool.receipt(r).request.pool_kind for r in contracts[0].receipts.values())
    assert kinds == [COMPUTE, FREQ, SPACE]
    assert len(pool.receipt(contracts[0].receipts["sense_space"]).request.cells) == 1


def test_form_contracts_edge_cases(tiny):
    pool = new_pool(tiny)
    assert form_contracts(tiny, pool, InformationOrder(), []) == ([], [])
    order = place_order(publish_demand(tiny), {0: 1, 1: 1})
    contracts, skipped = form_contracts(tiny, pool, order, [None, 99])
    assert contracts == [] and [k.target for k in skipped] == [0, 1]
    with pytest.raises(DecisionError):
        form_contracts(tiny, pool, order, [0])


def _shared_pws(tiny):
    """An edge upload from CAV 0 plus two passive contracts on its link."""
    pool = new_pool(tiny)
    demand = publish_demand(tiny)
    edge = [t for t in enumerate_templates(tiny, pool, OrderLine(0, 0.5, (0, 1)))
            if t.employee == 0 and t.site == rsu_site(0)][0]
    contracts = [realize(pool, edge, 0, 0.5)]
    for cid in (1, 2):
        passive = [t for t in enumerate_templates(tiny, pool, OrderLine(1, 0.0, (0, 1)))
                   if t.mode == PWS][0]
        contracts.append(realize(pool, passive, cid, 0.0))
    return pool, demand, contracts


def test_passive_contracts_cost_compute_only(tiny):
    pool, demand, contracts = _shared_pws(tiny)
    before = {k: v for k, v in pool.utilization().items() if k != COMPUTE}
    report = execute_round(tiny, pool, contracts)
    for c in contracts[1:]:
        compute = len(pool.receipt(c.receipts["compute"]).request.cells)
        assert report.outcome(c.contract_id).cost == compute * tiny.market.w_compute
        shared = report.outcome(c.contract_id).cells & report.outcome(0).cells
        assert len(shared) >= 2
    after = {k: v for k, v in pool.utilization().items() if k != COMPUTE}
    assert before == after


def test_distinct_cells_charged_once(tiny):
    pool, demand, contracts = _shared_pws(tiny)
    report = execute_round(tiny, pool, contracts)
    w = {SPACE: tiny.market.w_space, FREQ: tiny.market.w_freq, COMPUTE: tiny.market.w_compute}
    distinct = sum(w[g[0]] * len(cells) for g, cells in pool.cells.items())
    assert report.total_cost == distinct
    ledger = settle(demand, report)
    assert sum(ledger.contract_costs.values()) == ledger.resource_cost == distinct


def test_settlement_sells_to_every_buyer():
    demand = DemandProfile({0: {7: _terms()}, 1: {7: _terms()}})
    rep = _report([InformationRecord(7, 75.0, "edge", 0)], {7: 100.0})
    ledger = settle(demand, rep)
    assert ledger.gross_income == 150.0
    assert ledger.sold_counts == {7: 2}
    assert ledger.reuse_rate == 1.0 and ledger.hit_rate == 1.0


def test_settlement_quality_floor():
    demand = DemandProfile({0: {7: _terms(q_min=0.8)}})
    rep = _report([InformationRecord(7, 75.0, "edge", 0)], {7: 100.0},
                  [OrderLine(7, 0.75, (0,))])
    ledger = settle(demand, rep)
    assert ledger.gross_income == 0.0
    assert ledger.unsold_info == {7: 75.0}
    assert ledger.unfulfilled == []
    empty = settle(demand, _report([], {7: 100.0}, [OrderLine(7, 0.75, (0,))]))
    assert empty.unfulfilled == [7] and empty.net_profit == 0.0


def test_second_buyer_raises_gross_only(tiny):
    pool = new_pool(tiny)
    demand = DemandProfile({0: {0: _terms()}})
    order, contracts = greedy_allocator(tiny, pool, demand)
    assert contracts
    report = execute_round(tiny, pool, contracts, order=order)
    one = settle(demand, report)
    two = settle(DemandProfile({0: {0: _terms()}, 1: {0: _terms()}}), report)
    assert two.gross_income > one.gross_income
    assert two.resource_cost == one.resource_cost
    assert (one.reuse_rate, two.reuse_rate) == (0.0, 1.0)


@given(st.integers(0, 10_000), st.sampled_from(["random", "greedy"]))
def test_ledger_identity(seed, allocator):
    from isccmarket.scenario import generate_scenario
    s = generate_scenario(seed % 50)
    pool = new_pool(s)
    demand = publish_demand(s)
    if allocator == "random":
        order, contracts = random_allocator(seed, s, pool, demand)
    else:
        order, contracts = greedy_allocator(s, pool, demand)
    report, ledger = run_round(s, pool, demand, order, contracts)
    assert ledger.net_profit == ledger.gross_income - ledger.resource_cost
    assert sum(ledger.contract_costs.values()) == pytest.approx(ledger.resource_cost, abs=1e-12)
    assert all(v >= 0 for v in ledger.payments.values())


def test_dropping_a_contract_never_raises_gross(tiny):
    pool = new_pool(tiny)
    demand = publish_demand(tiny)
    order, contracts = greedy_allocator(tiny, pool, demand)
    full = settle(demand, execute_round(tiny, pool, contracts, order=order)).gross_income
    for k in range(len(contracts)):
        rest = contracts[:k] + contracts[k + 1:]
        part = settle(demand, execute_round(tiny, pool, rest, order=order)).gross_income
        assert part <= full


def test_summary_csv(tiny):
    pool = new_pool(tiny)
    demand = publish_demand(tiny)
    order, contracts = greedy_allocator(tiny, pool, demand)
    _, ledger = run_round(tiny, pool, demand, order, contracts)
    text = summary_csv([summary_row(0, ledger)])
    head, row = text.splitlines()
    assert head == "episode,gross,cost,net,hit_rate,reuse_rate,unfulfilled"
    assert row.split(",")[3] == repr(ledger.net_profit)
