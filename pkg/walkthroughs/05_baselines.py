"""
Random, greedy and exact allocation
===================================
"""
import numpy as np

from isccmarket.baselines import (brute_force_optimal, exhaustive_optimal, greedy_allocator,
                                  random_allocator)
from isccmarket.market import publish_demand, run_round
from isccmarket.resource_pool import new_pool
from isccmarket.scenario import load_fixture

s = load_fixture("tiny3x4")
demand = publish_demand(s)


def net(allocator, *args):
    pool = new_pool(s)
    order, contracts = allocator(*args, s, pool, demand)
    return run_round(s, pool, demand, order, contracts)[1].net_profit


random_nets = [net(random_allocator, seed) for seed in range(200)]
print("random mean", np.mean(random_nets))
print("greedy", net(greedy_allocator))

best = exhaustive_optimal(s, new_pool(s), demand)
print("oracle", best.net, "choices", best.choices, "nodes", best.nodes)
print("brute force agrees:", brute_force_optimal(s, new_pool(s), demand)[0] == best.net)
for c in best.contracts:
    print(" ", c.target, c.mode, f"cav{c.employee}", c.slots, c.site)
