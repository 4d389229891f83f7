"""
Training the distributor and purchaser
======================================

Replay-mode training on the tiny fixture. Pass an episode count to run
longer, e.g. ``python 06_training.py 2000``.
"""
import sys

from isccmarket.baselines import exhaustive_optimal
from isccmarket.market import publish_demand
from isccmarket.resource_pool import new_pool
from isccmarket.scenario import load_fixture
from isccmarket.trainer import TrainConfig, evaluate, train

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 400
s = load_fixture("tiny3x4")
oracle = exhaustive_optimal(s, new_pool(s), publish_demand(s)).net

result = train(TrainConfig(total_episodes=episodes), [s])
for row in result.curve:
    print(f"episodes {row['window'] * 100:5d}+  mean net {row['mean_net']:7.2f}")

mean, ledgers = evaluate(result.policies, [s])
print(f"greedy play {mean.net:.2f}, oracle {oracle:.2f}")
