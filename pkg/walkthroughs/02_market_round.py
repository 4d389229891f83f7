"""
One market round
================

Demand, order, contracts, execution and settlement on the tiny fixture.
"""
from isccmarket.market import (enumerate_templates, execute_round, form_contracts, place_order,
                               publish_demand, settle)
from isccmarket.resource_pool import new_pool
from isccmarket.scenario import load_fixture

s = load_fixture("tiny3x4")
pool = new_pool(s)
demand = publish_demand(s)
for buyer, wants in demand.entries.items():
    print(f"CAV {buyer} demands NCTs {sorted(wants)}")

# NCT 0 at the top ladder level, NCT 1 at the bottom one
order = place_order(demand, {0: 2, 1: 1}, s.market.ladder)
for line in order.lines:
    options = enumerate_templates(s, pool, line)
    print(line.target, line.q_ord, [t.label for t in options])

# first (cheapest-ranked) template for each line
contracts, skipped = form_contracts(s, pool, order, [0, 0])
report = execute_round(s, pool, contracts, order=order)
ledger = settle(demand, report)
print(ledger.to_json())
