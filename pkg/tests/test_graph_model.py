import networkx as nx
import pytest
from hypothesis import given, strategies as st

from isccmarket.baselines import greedy_allocator
from isccmarket.errors import StructureError
from isccmarket.graph_model import (DISTRIBUTOR, PURCHASER, build_employment_graph,
                                    build_flow_graph, fold_rsus, repeated_information,
                                    reused_resources)
from isccmarket.market import (ContractOutcome, EmploymentContract, ExecutionReport,
                               execute_round, publish_demand)
from isccmarket.process_models import AWS, PWS, InformationRecord
from isccmarket.resource_pool import COMPUTE, FREQ, BlockRequest, cav_site, new_pool, rsu_site


def _contract(cid, employer, employee, rsu=None, target=0, mode=AWS, receipts=None):
    site = rsu_site(rsu) if rsu is not None and employer == employee else cav_site(employee)
    return EmploymentContract(cid, employer, employee, rsu, target, mode, 1, site, receipts or {})


def _report(infos, values=None):
    """``infos``: contract id -> (target, info)."""
    rep = ExecutionReport(target_values=values or {0: 100.0, 1: 100.0})
    for cid, (t, info) in sorted(infos.items()):
        rec = InformationRecord(t, info, "local", cid)
        rep.outcomes.append(ContractOutcome(cid, t, None, 0.0, rec, 1.0, frozenset()))
    return rep


def test_self_employment_is_a_self_loop():
    fg = build_flow_graph([_contract(0, 3, 3)])
    assert list(fg.nodes) == [("cav", 3)]
    assert list(fg.edges()) == [(("cav", 3), ("cav", 3))]


def test_relay_path_and_fold():
    fg = build_flow_graph([_contract(0, 1, 2, rsu=0)])
    assert sorted(fg.edges()) == [(("cav", 2), ("rsu", 0)), (("rsu", 0), ("cav", 1))]
    cg = fold_rsus(fg)
    assert list(cg.edges(data=True)) == [(2, 1, {"contract": 0, "rsu": 0})]
    assert build_flow_graph([]).number_of_nodes() == 0


def test_parallel_contracts_stay_distinct():
    cg = fold_rsus(build_flow_graph([_contract(0, 1, 2, rsu=0), _contract(1, 1, 2, rsu=0),
                                     _contract(2, 0, 0)]))
    assert sorted((u, v, d["contract"], d["rsu"]) for u, v, d in cg.edges(data=True)) == [
        (0, 0, 2, None), (2, 1, 0, 0), (2, 1, 1, 0)]
    assert all(isinstance(n, int) for n in cg.nodes)


def test_dangling_rsu_path():
    fg = build_flow_graph([_contract(0, 1, 2, rsu=0)])
    fg.remove_edge(("rsu", 0), ("cav", 1))
    with pytest.raises(StructureError):
        fold_rsus(fg)


def test_repeated_information():
    a, b, c = _contract(0, 0, 0), _contract(1, 1, 1), _contract(2, 2, 2, target=1)
    rep = _report({0: (0, 75.0), 1: (0, 40.0), 2: (1, 30.0)})
    assert repeated_information(a, b, rep) == 40.0 == repeated_information(b, a, rep)
    assert repeated_information(a, c, rep) == 0.0
    assert repeated_information(a, a, rep) == 75.0


def test_reused_cells(tiny):
    pool = new_pool(tiny)
    link = pool.allocate(BlockRequest(FREQ, 0, {(0, 0), (1, 0), (2, 0)}, peer=0)).receipt_id
    echo = pool.allocate(BlockRequest(FREQ, 0, {(0, 0), (1, 0), (2, 0)}, share_with=link)).receipt_id
    own = pool.allocate(BlockRequest(COMPUTE, cav_site(1), {(0, 0)})).receipt_id
    up = _contract(0, 0, 0, rsu=0, receipts={"comm_freq": link})
    pws = _contract(1, 0, 0, mode=PWS, receipts={"sense_freq": echo})
    other = _contract(2, 1, 1, receipts={"compute": own})
    assert reused_resources(up, pws, pool) == 3 == reused_resources(pws, up, pool)
    assert reused_resources(up, other, pool) == 0


def test_employment_graph_edges(tiny):
    a, b = _contract(0, 0, 0), _contract(1, 1, 1)
    far = _contract(2, 2, 2, target=1)
    rep = _report({0: (0, 75.0), 1: (0, 40.0), 2: (1, 30.0)})
    g = build_employment_graph([far, b, a], rep, DISTRIBUTOR)
    assert g.contract_ids == [0, 1, 2]
    assert g.edges == [(0, 1, 40.0)]
    assert g.features.shape == (3, 6)
    assert list(g.features[0]) == [75.0, 1.0, 100.0, 0.0, 0.0, 1.0]
    # shared CAV, nothing else in common
    c = _contract(3, 2, 0, rsu=0, target=1)
    rep2 = _report({0: (0, 75.0), 3: (1, 10.0)})
    g2 = build_employment_graph([a, c], rep2, PURCHASER)
    assert g2.edges == [(0, 1, 0.0)]
    with pytest.raises(ValueError):
        build_employment_graph([a], rep, "broker")


def test_employment_graph_on_round(tiny):
    pool = new_pool(tiny)
    demand = publish_demand(tiny)
    order, contracts = greedy_allocator(tiny, pool, demand)
    report = execute_round(tiny, pool, contracts, order=order)
    for role in (DISTRIBUTOR, PURCHASER):
        g = build_employment_graph(contracts, report, role, pool)
        assert g.n == len(contracts)
        assert all(f >= 0 for _, _, f in g.edges)
        assert g.to_text().startswith(f"# role {role}\n# edges\n")
    assert build_employment_graph([], report, DISTRIBUTOR).n == 0


def test_text_dump():
    rep = _report({0: (0, 75.0), 1: (0, 40.0)})
    text = build_employment_graph([_contract(0, 0, 0), _contract(1, 1, 1)], rep, DISTRIBUTOR).to_text()
    assert text.splitlines() == [
        "# role distributor", "# edges", "(0, 1, 40.0)",
        "# vertices: contract info cost info_value q_ord pws self_employment",
        "0 75.0 1.0 100.0 0.0 0.0 1.0", "1 40.0 1.0 100.0 0.0 0.0 1.0"]


_pairs = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 1),
                            st.floats(0, 100)), min_size=1, max_size=6)


@given(_pairs, st.randoms(use_true_random=False))
def test_relabeling_gives_isomorphic_graph(rows, rnd):
    contracts = [_contract(k, er, ee, target=t) for k, (er, ee, t, _) in enumerate(rows)]
    infos = {k: (t, v) for k, (_, _, t, v) in enumerate(rows)}
    ids = list(range(len(rows)))
    rnd.shuffle(ids)
    relabeled = [_contract(ids[k], er, ee, target=t) for k, (er, ee, t, _) in enumerate(rows)]
    infos2 = {ids[k]: infos[k] for k in infos}
    for role in (DISTRIBUTOR, PURCHASER):
        g1 = build_employment_graph(contracts, _report(infos), role).to_networkx()
        g2 = build_employment_graph(relabeled, _report(infos2), role).to_networkx()
        assert g1.number_of_nodes() == len(rows)
        assert nx.is_isomorphic(g1, g2, node_match=lambda x, y: x == y,
                                edge_match=lambda x, y: x == y)
