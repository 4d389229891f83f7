"""
From contracts to employment graphs
===================================

The information-flow digraph, its RSU-folded form and the contract graphs
seen by the two policies.
"""
from isccmarket.baselines import exhaustive_optimal
from isccmarket.graph_model import (DISTRIBUTOR, PURCHASER, build_employment_graph,
                                    build_flow_graph, fold_rsus)
from isccmarket.market import execute_round, publish_demand
from isccmarket.resource_pool import new_pool
from isccmarket.scenario import load_fixture

s = load_fixture("tiny3x4")
demand = publish_demand(s)
best = exhaustive_optimal(s, new_pool(s), demand)
pool = best.pool
report = execute_round(s, pool, best.contracts, order=best.order)

fg = build_flow_graph(best.contracts)
print("flow edges:", sorted(fg.edges()))
for u, v, data in fold_rsus(fg).edges(data=True):
    print(f"folded: CAV {u} -> CAV {v}, contract {data['contract']}, rsu {data['rsu']}")

for role in (DISTRIBUTOR, PURCHASER):
    print(build_employment_graph(best.contracts, report, role, pool).to_text())
