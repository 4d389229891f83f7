"""
Twin resource pool and the sensing models
=========================================

Allocate beams and subcarriers for active sensing, then piggyback passive
sensing on a communication link at no extra spectrum cost.
"""
import numpy as np

from isccmarket.process_models import aws_sense, detection_quality, pws_sense, sample_detections
from isccmarket.resource_pool import FREQ, SPACE, BlockRequest, new_pool
from isccmarket.scenario import load_fixture, visible_targets

s = load_fixture("tiny3x4")
pool = new_pool(s)
print("CAV 0 sees NCTs", sorted(visible_targets(s, 0)))

# two slots of beam sector 0 and one subcarrier per slot
space = pool.allocate(BlockRequest(SPACE, 0, {(0, 0), (1, 0)}))
freq = pool.allocate(BlockRequest(FREQ, 0, {(0, 1), (1, 1)}))
sr = aws_sense(s, pool, 0, 1, space.receipt_id, freq.receipt_id, s.process)
print("active: q =", sr.quality, "data =", sr.data_volume)

# a link toward RSU 0, shared by a passive sensor
link = pool.allocate(BlockRequest(FREQ, 0, {(2, 0), (3, 0)}, peer=0))
before = pool.utilization()
echo = pool.allocate(BlockRequest(FREQ, 0, {(2, 0), (3, 0)}, share_with=link.receipt_id))
sr = pws_sense(s, pool, 0, 1, echo.receipt_id, s.process)
print("passive: q =", round(sr.quality, 4), "extra cost =", echo.weighted_cost)
print("utilization unchanged:", pool.utilization() == before)

# the closed form against per-slot Bernoulli draws
draws = sample_detections(0.2, 3, np.random.default_rng(0), size=100_000)
print("q(0.2, 3) =", detection_quality(0.2, 3), "sampled", draws.mean())
