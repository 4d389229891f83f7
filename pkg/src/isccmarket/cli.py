"""Command-line entry point.

    isccmarket [--seed N] [--out DIR] [--params k=v] COMMAND ...

Commands: gen-scenario, run, train, eval, oracle. A scenario argument is a
path to a JSON file or ``@name`` for a bundled fixture (``@tiny3x4``).
Exit status: 0 success, 2 usage or configuration error, 3 training diverged.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import exhaustive_optimal, greedy_allocator, random_allocator
from .config import apply_overrides
from .errors import DivergenceError, IsccError
from .graph_model import DISTRIBUTOR, PURCHASER
from .market import publish_demand, run_round, summary_csv, summary_row
from .neural import params_from_json
from .resource_pool import new_pool
from .scenario import Scenario, dump_scenario, generate_scenario, load_fixture, load_scenario
from .trainer import (FEATURE_NAMES, PolicyPair, TrainConfig, config_from_dict, evaluate,
                      run_episode, save_run, train)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
ALLOCATORS = ("random", "greedy", "oracle", "policy")


class UsageError(Exception):
    pass


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--params expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def read_scenario(ref: str, overrides: dict[str, str] | None = None) -> Scenario:
    if ref.startswith("@"):
        s = load_fixture(ref[1:])
    else:
        path = Path(ref)
        if not path.is_file():
            raise UsageError(f"scenario file not found: {ref}")
        s = load_scenario(path.read_text())
    if overrides:
        process, market = apply_overrides(s.process, s.market, overrides)
        s = replace(s, process=process, market=market)
    return s


def read_policies(distributor: str, purchaser: str) -> PolicyPair:
    pair = []
    for role, ref in ((DISTRIBUTOR, distributor), (PURCHASER, purchaser)):
        path = Path(ref)
        if not path.is_file():
            raise UsageError(f"checkpoint not found: {ref}")
        params = params_from_json(path.read_text())
        if params.arch.d_v != len(FEATURE_NAMES[role]):
            raise UsageError(f"{ref}: vertex feature width {params.arch.d_v} does not fit the "
                             f"{role} policy ({len(FEATURE_NAMES[role])})")
        pair.append(params)
    return PolicyPair(*pair)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


# -- commands ------------------------------------------------------------------

def cmd_gen_scenario(args) -> int:
    s = generate_scenario(args.seed, args.cavs, args.rsus, args.ncts, args.radius, args.horizon,
                          args.sectors, args.subcarriers)
    if args.params:
        process, market = apply_overrides(s.process, s.market, args.params)
        s = replace(s, process=process, market=market)
    print(_write(args.out, args.name, dump_scenario(s)))
    return EXIT_OK


def cmd_run(args) -> int:
    s = read_scenario(args.scenario, args.params)
    rng = np.random.default_rng(args.seed)
    if args.allocator == "policy":
        if not (args.distributor and args.purchaser):
            raise UsageError("--allocator policy needs --distributor and --purchaser checkpoints")
        episode = run_episode(s, read_policies(args.distributor, args.purchaser), rng, greedy=True)
        ledger = episode.ledger
    else:
        pool = new_pool(s)
        demand = publish_demand(s)
        if args.allocator == "random":
            order, contracts = random_allocator(args.seed, s, pool, demand)
        elif args.allocator == "greedy":
            order, contracts = greedy_allocator(s, pool, demand)
        else:
            result = exhaustive_optimal(s, pool, demand)
            order, contracts, pool = result.order, result.contracts, result.pool
        _, ledger = run_round(s, pool, demand, order, contracts, rng)
    _write(args.out, "ledger.json", ledger.to_json())
    _write(args.out, "summary.csv", summary_csv([summary_row(0, ledger)]))
    print(f"net {ledger.net_profit!r} gross {ledger.gross_income!r} cost {ledger.resource_cost!r}")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"train config not found: {args.config}")
        doc = json.loads(path.read_text())
    if args.episodes is not None:
        doc["total_episodes"] = args.episodes
    if args.seed_given:
        doc["seed"] = args.seed
    cfg = config_from_dict(doc)
    scenarios = [read_scenario(ref, args.params) for ref in (args.scenario or ["@tiny3x4"])]
    merge_log = None
    if args.merge_log:
        merge_log = json.loads(Path(args.merge_log).read_text())
    result = train(cfg, scenarios, merge_log=merge_log)
    save_run(result, cfg, args.out)
    last = result.curve[-1]["mean_net"] if result.curve else float("nan")
    print(f"version {result.version} windows {len(result.curve)} final mean net {last!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    policies = read_policies(args.distributor, args.purchaser)
    scenarios = [read_scenario(ref, args.params) for ref in args.scenario or ()]
    _, ledgers = evaluate(policies, scenarios, args.episodes, args.seed)
    _write(args.out, "metrics.csv", summary_csv(summary_row(k, l) for k, l in enumerate(ledgers)))
    if ledgers:
        print(f"mean net {float(np.mean([l.net_profit for l in ledgers]))!r}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    s = read_scenario(args.scenario, args.params)
    pool = new_pool(s)
    result = exhaustive_optimal(s, pool, publish_demand(s))
    doc = {"net": result.net, "targets": list(result.targets), "choices": list(result.choices),
           "order": [[ln.target, ln.q_ord] for ln in result.order.lines],
           "contracts": [{"contract": c.contract_id, "target": c.target, "employee": c.employee,
                          "employer": c.employer, "rsu": c.rsu, "mode": c.mode, "slots": c.slots,
                          "site": list(c.site)} for c in result.contracts],
           "nodes": result.nodes}
    text = json.dumps(doc, indent=2) + "\n"
    _write(args.out, "oracle.json", text)
    sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    # accepted before or after the command name
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS)
    p.add_argument("--params", action="append", default=argparse.SUPPRESS, metavar="K=V",
                   help="override one config value; repeatable")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="isccmarket", parents=[common],
                                     description="Information market simulator and learner.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenario", parents=[common], help="write a random scenario")
    g.add_argument("--cavs", type=int, default=3)
    g.add_argument("--rsus", type=int, default=1)
    g.add_argument("--ncts", type=int, default=4)
    g.add_argument("--radius", type=float, default=100.0)
    g.add_argument("--horizon", type=int, default=8)
    g.add_argument("--sectors", type=int, default=4)
    g.add_argument("--subcarriers", type=int, default=4)
    g.add_argument("--name", default="scenario.json")
    g.set_defaults(func=cmd_gen_scenario)

    r = sub.add_parser("run", parents=[common], help="one market round")
    r.add_argument("--scenario", required=True)
    r.add_argument("--allocator", choices=ALLOCATORS, default="greedy")
    r.add_argument("--distributor")
    r.add_argument("--purchaser")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", parents=[common], help="train both policies")
    t.add_argument("--config", help="JSON object of TrainConfig fields")
    t.add_argument("--scenario", action="append")
    t.add_argument("--episodes", type=int)
    t.add_argument("--merge-log", help="replay this merge order")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="greedy evaluation of checkpoints")
    e.add_argument("--distributor", required=True)
    e.add_argument("--purchaser", required=True)
    e.add_argument("--scenario", action="append")
    e.add_argument("--episodes", type=int)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", parents=[common], help="exact optimum as JSON")
    o.add_argument("--scenario", required=True)
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = hasattr(args, "seed")
    args.seed = getattr(args, "seed", 0)
    args.out = getattr(args, "out", Path("."))
    try:
        args.params = _overrides(getattr(args, "params", None))
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, IsccError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
