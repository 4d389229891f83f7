import threading
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isccmarket.baselines import exhaustive_optimal
from isccmarket.errors import DivergenceError, StalePushError
from isccmarket.graph_model import DISTRIBUTOR, PURCHASER
from isccmarket.market import TransactionLedger, publish_demand
from isccmarket.neural import linear_scorer_params
from isccmarket.resource_pool import new_pool
from isccmarket.trainer import (FEATURE_NAMES, EpisodeStats, GlobalStore, PolicyPair, TrainConfig,
                                config_from_dict, curve_csv, default_archs, episode_gradient,
                                evaluate, initial_policies, push_merge, run_episode, save_run,
                                target_returns, train, training_return, worker_reward)

QUIET = TrainConfig(hidden=8, normalize_rewards=False)


def oracle_policies(cfg=QUIET):
    """Linear scorers that reproduce the tiny3x4 optimum under greedy play.

    Distributor: information minus 1.1 x cost, so only profitable levels beat
    the zero skip logit. Purchaser: cheapest candidate first, then the one
    that keeps a link open for later passive sensing.
    """
    archs = default_archs(cfg)
    dist = np.zeros(len(FEATURE_NAMES[DISTRIBUTOR]))
    dist[:2] = [1.0, -1.1]
    purch = np.zeros(len(FEATURE_NAMES[PURCHASER]))
    purch[1], purch[-1] = -1.0, 1.0
    return PolicyPair(linear_scorer_params(archs[DISTRIBUTOR], dist),
                      linear_scorer_params(archs[PURCHASER], purch))


def _store(cfg=QUIET, staleness=2):
    return GlobalStore(initial_policies(cfg), 0.1, staleness)


def test_config_validation():
    assert config_from_dict({"lr": 0.05}).lr == 0.05
    assert config_from_dict(TrainConfig().to_dict()) == TrainConfig()
    with pytest.raises(ValueError):
        config_from_dict({"learning_rate": 1})
    with pytest.raises(ValueError):
        TrainConfig(workers_per_role=0)
    with pytest.raises(ValueError):
        TrainConfig(beta=-1.0)


def test_zero_push_only_bumps_version():
    store = _store()
    before = store.policies.copy()
    v = push_merge(store, np.zeros(before.distributor.vector.size), DISTRIBUTOR, 0)
    assert v == 1 == store.version
    assert np.array_equal(before.distributor.vector, store.policies.distributor.vector)


def test_push_order_does_not_matter():
    rng = np.random.default_rng(0)
    n = _store().policies.purchaser.vector.size
    g1, g2 = rng.normal(size=n), rng.normal(size=n)
    a, b = _store(), _store()
    push_merge(a, g1, PURCHASER, 0)
    push_merge(a, g2, PURCHASER, 0)
    push_merge(b, g2, PURCHASER, 0)
    push_merge(b, g1, PURCHASER, 0)
    assert np.allclose(a.policies.purchaser.vector, b.policies.purchaser.vector, rtol=0, atol=1e-15)


def test_staleness_boundary():
    store = _store(staleness=2)
    zero = np.zeros(store.policies.distributor.vector.size)
    for _ in range(3):
        push_merge(store, zero, DISTRIBUTOR, store.version)
    push_merge(store, zero, DISTRIBUTOR, 1)  # current - K
    with pytest.raises(StalePushError) as err:
        push_merge(store, zero, DISTRIBUTOR, 1)  # now current - K - 1
    assert err.value.current_version == 4
    with pytest.raises(ValueError):
        push_merge(store, zero[:-1], DISTRIBUTOR, 4)


def test_concurrent_pushes_are_linearizable():
    store = _store(staleness=1000)
    n = store.policies.distributor.vector.size
    grads = [np.random.default_rng(k).normal(size=n) for k in range(16)]
    start = store.policies.distributor.vector.copy()

    def push(g):
        push_merge(store, g, DISTRIBUTOR, 0)

    threads = [threading.Thread(target=push, args=(g,)) for g in grads]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.version == 16
    assert np.allclose(store.policies.distributor.vector, start - 0.1 * sum(grads), atol=1e-12)


def test_reward_identities(tiny):
    ep = run_episode(tiny, initial_policies(QUIET), np.random.default_rng(0))
    led = ep.ledger
    d = worker_reward(DISTRIBUTOR, led, ep.stats, QUIET)
    p = worker_reward(PURCHASER, led, ep.stats, QUIET)
    assert d + p == led.net_profit
    assert (d, p) == (led.gross_income, -led.resource_cost)
    for role in (DISTRIBUTOR, PURCHASER):
        parts = target_returns(role, ep, QUIET)
        assert sum(parts.values()) == pytest.approx(training_return(role, led, QUIET), abs=1e-9)
        assert training_return(role, led, QUIET) == pytest.approx(led.net_profit, abs=1e-12)


def test_penalties():
    cfg = replace(QUIET, lambda_unsold=0.5, lambda_unfulfilled=2.0)
    led = TransactionLedger(gross_income=10.0, resource_cost=4.0, net_profit=6.0,
                            fused_info={0: 8.0, 1: 3.0}, sold_counts={0: 1, 1: 0},
                            unfulfilled=[2, 3, 4])
    assert worker_reward(DISTRIBUTOR, led, None, cfg) == 10.0 - 0.5 * 3.0
    assert worker_reward(PURCHASER, led, None, cfg) == -4.0 - 6.0
    with pytest.raises(ValueError):
        worker_reward("broker", led, None, cfg)


def test_episode_is_legal_and_deterministic(tiny):
    pol = initial_policies(QUIET)
    a = run_episode(tiny, pol, np.random.default_rng(3))
    b = run_episode(tiny, pol, np.random.default_rng(3))
    assert a.choices == b.choices
    assert a.ledger.to_json() == b.ledger.to_json()
    assert a.ledger.net_profit == a.ledger.gross_income - a.ledger.resource_cost
    roles = [d.role for d in a.decisions]
    assert roles.count(DISTRIBUTOR) == len(publish_demand(tiny).targets())
    assert roles == sorted(roles)  # all distributor decisions come first


def test_empty_demand_episode(tiny):
    s = replace(tiny, ncts=())
    ep = run_episode(s, initial_policies(QUIET), np.random.default_rng(0))
    assert ep.decisions == [] and ep.ledger.net_profit == 0.0
    grad = episode_gradient(initial_policies(QUIET), ep, DISTRIBUTOR, {}, QUIET)
    assert not grad.any()


def test_hand_built_policies_reach_the_oracle(tiny):
    best = exhaustive_optimal(tiny, new_pool(tiny), publish_demand(tiny)).net
    mean, ledgers = evaluate(oracle_policies(), [tiny])
    assert mean.net == pytest.approx(best, abs=1e-9)
    again = evaluate(oracle_policies(), [tiny], episodes=3)
    assert [l.to_json() for l in again[1]] == [ledgers[0].to_json()] * 3
    assert evaluate(oracle_policies(), []) == (None, [])


def test_zero_episodes_returns_initial(tiny):
    cfg = replace(QUIET, total_episodes=0)
    r = train(cfg, [tiny])
    init = initial_policies(cfg)
    assert r.version == 0 and r.curve == [] and r.merge_log == []
    assert np.array_equal(r.policies.distributor.vector, init.distributor.vector)
    assert curve_csv(r.curve) == "window,mean_gross,mean_cost,mean_net,hit_rate,reuse_rate\n"


@pytest.mark.parametrize("episodes,window,rows", [(10, 4, 3), (8, 4, 2), (1, 100, 1)])
def test_curve_rows(tiny, episodes, window, rows):
    r = train(replace(QUIET, total_episodes=episodes, window=window), [tiny])
    assert len(r.curve) == rows
    assert [ep for ep, _ in r.episode_stats] == list(range(episodes))


def test_replay_is_bit_exact(tiny, tmp_path):
    cfg = replace(QUIET, total_episodes=24, episodes_per_push=2)
    a = train(cfg, [tiny], checkpoint_dir=tmp_path / "a")
    b = train(cfg, [tiny], checkpoint_dir=tmp_path / "b")
    for name in ("distributor.json", "purchaser.json", "learning_curve.csv", "merge_log.json",
                 "train_config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = train(cfg, [tiny], merge_log=a.merge_log)
    assert c.curve_csv() == a.curve_csv()
    assert np.array_equal(c.policies.purchaser.vector, a.policies.purchaser.vector)


def test_final_params_follow_the_merge_log(tiny):
    """Replaying the recorded pushes sequentially lands on the same parameters."""
    cfg = replace(QUIET, total_episodes=12, mode="async")
    r = train(cfg, [tiny])
    assert [e["version"] for e in r.merge_log if e["accepted"]] == list(range(1, r.version + 1))
    again = train(replace(cfg, mode="replay"), [tiny], merge_log=r.merge_log)
    assert np.array_equal(again.policies.distributor.vector, r.policies.distributor.vector)
    assert np.array_equal(again.policies.purchaser.vector, r.policies.purchaser.vector)


def test_divergence_guard(tiny):
    cfg = replace(QUIET, total_episodes=4, divergence_bound=1e-6)
    with pytest.raises(DivergenceError):
        train(cfg, [tiny])


def test_training_needs_scenarios():
    with pytest.raises(ValueError):
        train(replace(QUIET, total_episodes=1), [])


def test_save_run(tiny, tmp_path):
    r = train(replace(QUIET, total_episodes=2), [tiny])
    save_run(r, QUIET, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "distributor.json", "learning_curve.csv", "merge_log.json", "purchaser.json",
        "train_config.json"]


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_episode_stats_mean(nets):
    m = EpisodeStats.mean([EpisodeStats(net=x) for x in nets])
    assert m.net == pytest.approx(float(np.mean(nets)), abs=1e-9)
    assert EpisodeStats.mean([]) == EpisodeStats()
