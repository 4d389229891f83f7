"""Asynchronous two-role actor-critic over employment graphs.

Distributor workers pick, per demanded target, an ordered quality level (or
skip); purchaser workers pick, per order line, a contract template. Both
policies are message-passing networks over graphs whose vertices are
contracts (formed or candidate). Workers push gradients to a
``GlobalStore`` that applies them additively under a lock.

Two schedules:

* ``replay``: a deterministic round robin. Each cycle every worker pulls the
  same snapshot, runs its episodes, then pushes in worker order. The merge
  log of any run (including ``async`` ones) can be fed back to reproduce it.
* ``async``: one thread per worker; merges are serialized by the store.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import expected_payment
from .config import ProcessParams
from .errors import DivergenceError, IsccError, StalePushError
from .graph_model import DISTRIBUTOR, PURCHASER, ROLES, VERTEX_FEATURES, EmploymentGraph
from .market import (DemandProfile, EmploymentContract, OrderLine, Template, TransactionLedger,
                     enumerate_templates, execute_round, place_order, publish_demand, realize,
                     settle)
from .neural import (GnnArch, LossSpec, PolicyParams, decision_loss, gnn_backward, gnn_forward,
                     init_params, params_to_json, policy_distribution)
from .process_models import PWS
from .resource_pool import TwinResourcePool, new_pool
from .scenario import Scenario, angular_distance, bearing, visible_targets

log = logging.getLogger(__name__)

DISTRIBUTOR_FEATURES = VERTEX_FEATURES + ("payment", "buyers", "candidate", "chosen")
PURCHASER_FEATURES = VERTEX_FEATURES + ("candidate", "reused", "reuse_potential")
FEATURE_NAMES = {DISTRIBUTOR: DISTRIBUTOR_FEATURES, PURCHASER: PURCHASER_FEATURES}
CURVE_FIELDS = ("window", "mean_gross", "mean_cost", "mean_net", "hit_rate", "reuse_rate")
REPLAY, ASYNC = "replay", "async"


# -- configuration and bookkeeping --------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    workers_per_role: int = 2
    episodes_per_push: int = 1
    total_episodes: int = 2000
    discount: float = 1.0
    beta: float = 1e-2
    value_coef: float = 0.5
    lambda_unsold: float = 0.0
    lambda_unfulfilled: float = 0.0
    seed: int = 0
    lr: float = 3e-2
    staleness: int = 4
    hidden: int = 32
    layers: int = 2
    mlp_depth: int = 2
    window: int = 100
    # weight of (net - own core reward) added to each worker's return
    guidance: float = 1.0
    normalize_rewards: bool = True
    divergence_bound: float = 1e3
    # global norm cap on each pushed gradient; 0 disables
    grad_clip: float = 5.0
    mode: str = REPLAY

    def __post_init__(self):
        for name in ("workers_per_role", "episodes_per_push", "window", "hidden", "layers",
                     "mlp_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.total_episodes < 0 or self.staleness < 0:
            raise ValueError("total_episodes and staleness must be >= 0")
        for name in ("beta", "value_coef", "lambda_unsold", "lambda_unfulfilled", "lr",
                     "guidance", "discount", "grad_clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.mode not in (REPLAY, ASYNC):
            raise ValueError(f"mode must be {REPLAY!r} or {ASYNC!r}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(doc: dict) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**doc)


@dataclass(frozen=True)
class EpisodeStats:
    gross: float = 0.0
    cost: float = 0.0
    net: float = 0.0
    hit_rate: float = 0.0
    reuse_rate: float = 0.0
    unfulfilled: float = 0.0

    @classmethod
    def from_ledger(cls, ledger: TransactionLedger) -> "EpisodeStats":
        return cls(ledger.gross_income, ledger.resource_cost, ledger.net_profit,
                   ledger.hit_rate, ledger.reuse_rate, float(len(ledger.unfulfilled)))

    @classmethod
    def mean(cls, items: Sequence["EpisodeStats"]) -> "EpisodeStats":
        if not items:
            return cls()
        cols = np.array([[getattr(x, f) for f in cls.__dataclass_fields__] for x in items])
        return cls(*(float(v) for v in cols.mean(axis=0)))


@dataclass
class PolicyPair:
    distributor: PolicyParams
    purchaser: PolicyParams

    def __getitem__(self, role: str) -> PolicyParams:
        return self.distributor if role == DISTRIBUTOR else self.purchaser

    def copy(self) -> "PolicyPair":
        return PolicyPair(self.distributor.copy(), self.purchaser.copy())


def default_archs(cfg: TrainConfig) -> dict[str, GnnArch]:
    return {role: GnnArch(len(FEATURE_NAMES[role]), cfg.hidden, cfg.layers, 1, cfg.mlp_depth)
            for role in ROLES}


def initial_policies(cfg: TrainConfig) -> PolicyPair:
    archs = default_archs(cfg)
    return PolicyPair(init_params(archs[DISTRIBUTOR], cfg.seed),
                      init_params(archs[PURCHASER], cfg.seed + 1))


# -- decision graphs -----------------------------------------------------------

@dataclass
class _Vertex:
    features: list[float]
    target: int
    info: float
    cavs: frozenset
    cells: frozenset


def _scales(s: Scenario) -> tuple[float, float]:
    value = max([t.info_value for t in s.ncts] + [1.0])
    return value, 1.0 / max(s.time_horizon, 1)


def _base_features(tpl: Template, q_ord: float, value_scale: float) -> list[float]:
    self_emp = tpl.employer == tpl.employee and tpl.rsu is None
    return [tpl.expected_info / value_scale, tpl.cost / value_scale,
            (tpl.expected_info / tpl.quality if tpl.quality else 0.0) / value_scale, q_ord,
            1.0 if tpl.mode == PWS else 0.0, 1.0 if self_emp else 0.0]


def _graph(role: str, vertices: list[_Vertex], s: Scenario) -> EmploymentGraph:
    value_scale, cell_scale = _scales(s)
    edges = []
    for i in range(len(vertices)):
        for j in range(i + 1, len(vertices)):
            a, b = vertices[i], vertices[j]
            if role == DISTRIBUTOR:
                f = min(a.info, b.info) / value_scale if a.target == b.target else 0.0
            else:
                f = len(a.cells & b.cells) * cell_scale
            if f > 0 or a.cavs & b.cavs:
                edges.append((i, j, f))
    feats = np.array([v.features for v in vertices], dtype=np.float64)
    if not vertices:
        feats = np.zeros((0, len(FEATURE_NAMES[role])))
    return EmploymentGraph(role, list(range(len(vertices))), feats, edges)


def _probe(demand: DemandProfile, target: int, q: float) -> OrderLine:
    buyers = tuple(demand.buyers_of(target))
    return OrderLine(target, q, buyers, not buyers)


def distributor_options(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                        params: ProcessParams | None = None):
    """Speculative option vertices, one per (demanded target, ladder level > 0).

    Each option is represented by the cheapest template that would serve it
    on ``pool``. Returns ``(graph, options)`` with ``options[i] = (target,
    ladder index)``; levels without any feasible template get no vertex.
    The graph still lacks the two per-decision flag columns.
    """
    params = params or s.process
    ladder = s.market.ladder
    value_scale, _ = _scales(s)
    n_cavs = max(len(s.cavs), 1)
    vertices, options = [], []
    for target in demand.targets():
        info_value = s.nct(target).info_value
        for level in range(1, len(ladder)):
            line = _probe(demand, target, ladder[level])
            templates = enumerate_templates(s, pool, line, params)
            if not templates:
                continue
            tpl = min(templates, key=lambda x: x.cost)
            pay = expected_payment(demand, target, tpl, info_value)
            feats = _base_features(tpl, ladder[level], value_scale)
            feats += [pay / value_scale, len(line.buyers) / n_cavs, 0.0, 0.0]
            vertices.append(_Vertex(feats, target, tpl.expected_info,
                                    frozenset({tpl.employer, tpl.employee}), frozenset()))
            options.append((target, level))
    return _graph(DISTRIBUTOR, vertices, s), options


def flag_options(graph: EmploymentGraph, options, current: int | None,
                 chosen=()) -> EmploymentGraph:
    """Mark the options of the target being decided and those already ordered."""
    feats = graph.features.copy()
    chosen = set(chosen)
    for i, opt in enumerate(options):
        feats[i, -2] = 1.0 if opt[0] == current else 0.0
        feats[i, -1] = 1.0 if i in chosen else 0.0
    return EmploymentGraph(graph.role, graph.contract_ids, feats, graph.edges)


def distributor_graph(s: Scenario, pool: TwinResourcePool, demand: DemandProfile,
                      params: ProcessParams | None = None, current: int | None = None,
                      chosen=()):
    """Option graph as seen when deciding ``current`` after ordering ``chosen``."""
    graph, options = distributor_options(s, pool, demand, params)
    return flag_options(graph, options, current, chosen), options


def reuse_potential(s: Scenario, tpl: Template, pending: Sequence[OrderLine],
                    params: ProcessParams) -> int:
    """Pending lines a passive sensor could serve along this template's uplink."""
    if tpl.site[0] != "rsu":
        return 0
    cav = s.cav(tpl.employee)
    link = bearing(cav.position, s.rsu(tpl.site[1]).position)
    seen = visible_targets(s, tpl.employee)
    count = 0
    for line in pending:
        if line.target == tpl.target or line.target not in seen:
            continue
        if angular_distance(bearing(cav.position, s.nct(line.target).position), link) \
                <= params.theta_tol:
            count += 1
    return count


def purchaser_graph(s: Scenario, formed: Sequence[tuple[EmploymentContract, Template]],
                    candidates: Sequence[Template], line: OrderLine,
                    pending: Sequence[OrderLine], params: ProcessParams | None = None):
    """Formed contracts followed by the candidate templates for ``line``."""
    params = params or s.process
    value_scale, cell_scale = _scales(s)
    vertices = []
    taken: set = set()
    for contract, tpl in formed:
        cells = frozenset(tpl.cells())
        taken |= cells
        vertices.append(_Vertex(_base_features(tpl, contract.q_ord, value_scale) + [0.0, 0.0, 0.0],
                                tpl.target, tpl.expected_info, frozenset(contract.cavs), cells))
    for tpl in candidates:
        cells = frozenset(tpl.cells())
        feats = _base_features(tpl, line.q_ord, value_scale)
        feats += [1.0, len(cells & taken) * cell_scale,
                  float(reuse_potential(s, tpl, pending, params))]
        vertices.append(_Vertex(feats, tpl.target, tpl.expected_info,
                                frozenset({tpl.employer, tpl.employee}), cells))
    return _graph(PURCHASER, vertices, s)


# -- episodes ----------------------------------------------------------------

@dataclass
class Decision:
    role: str
    graph: EmploymentGraph
    scores: np.ndarray
    value: float
    cache: object
    mask: tuple
    action: int
    target: int
    extra_logits: tuple = ()


@dataclass
class Episode:
    decisions: list[Decision]
    stats: EpisodeStats
    ledger: TransactionLedger
    contracts: list[EmploymentContract] = field(default_factory=list)
    choices: dict = field(default_factory=dict)
    pool: TwinResourcePool | None = field(default=None, repr=False)


def _choose(scores, mask, rng, greedy: bool) -> int:
    z = np.asarray(scores, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if greedy:
        idx = np.flatnonzero(m)
        return int(idx[np.argmax(z[idx])])
    probs = policy_distribution(z, m, required=True)
    return int(rng.choice(len(z), p=probs))


def run_episode(s: Scenario, policies: PolicyPair, rng: np.random.Generator,
                greedy: bool = False, params: ProcessParams | None = None) -> Episode:
    """One market round driven by both policies.

    The distributor graph is built once from speculative templates on the
    fresh pool; each demanded target then draws its level from its own
    option vertices plus a constant-zero skip logit. The purchaser sees a
    fresh graph per order line (formed contracts + candidates) and must pick
    a candidate; lines with no feasible template go unserved.
    """
    params = params or s.process
    pool = new_pool(s)
    demand = publish_demand(s)
    decisions: list[Decision] = []
    levels: dict[int, int] = {}
    if not demand.is_empty():
        base, options = distributor_options(s, pool, demand, params)
        chosen: list[int] = []
        for target in demand.targets():
            dgraph = flag_options(base, options, target, chosen)
            scores, value, cache = gnn_forward(policies.distributor, dgraph)
            mask = tuple([opt[0] == target for opt in options] + [True])
            z = np.concatenate([scores, [0.0]])
            a = _choose(z, mask, rng, greedy)
            levels[target] = options[a][1] if a < len(options) else 0
            if a < len(options):
                chosen.append(a)
            decisions.append(Decision(DISTRIBUTOR, dgraph, scores, value, cache, mask, a, target,
                                      (0.0,)))
    order = place_order(demand, levels, s.market.ladder)

    formed: list[tuple[EmploymentContract, Template]] = []
    for i, line in enumerate(order.lines):
        candidates = enumerate_templates(s, pool, line, params)
        if not candidates:
            continue
        pgraph = purchaser_graph(s, formed, candidates, line, order.lines[i + 1:], params)
        scores, value, cache = gnn_forward(policies.purchaser, pgraph)
        mask = tuple([False] * len(formed) + [True] * len(candidates))
        a = _choose(scores, mask, rng, greedy)
        tpl = candidates[a - len(formed)]
        formed.append((realize(pool, tpl, len(formed), line.q_ord), tpl))
        decisions.append(Decision(PURCHASER, pgraph, scores, value, cache, mask, a, line.target))

    contracts = [c for c, _ in formed]
    report = execute_round(s, pool, contracts, params, order, rng)
    ledger = settle(demand, report, s.market.ladder)
    episode = Episode(decisions, EpisodeStats.from_ledger(ledger), ledger, contracts,
                      {"levels": levels, "templates": [t.label for _, t in formed]}, pool)
    return episode


def worker_reward(role: str, ledger: TransactionLedger, stats: EpisodeStats | None,
                  cfg: TrainConfig) -> float:
    """Raw per-episode reward of one role, before guidance and normalization."""
    if role == DISTRIBUTOR:
        return ledger.gross_income - cfg.lambda_unsold * (ledger.produced_info - ledger.sold_info)
    if role == PURCHASER:
        return -ledger.resource_cost - cfg.lambda_unfulfilled * len(ledger.unfulfilled)
    raise ValueError(f"unknown role {role!r}")


def training_return(role: str, ledger: TransactionLedger, cfg: TrainConfig) -> float:
    """Own reward plus ``guidance`` times the share of net profit it leaves out."""
    core = ledger.gross_income if role == DISTRIBUTOR else -ledger.resource_cost
    return worker_reward(role, ledger, None, cfg) + cfg.guidance * (ledger.net_profit - core)


def target_returns(role: str, episode: Episode, cfg: TrainConfig) -> dict[int, float]:
    """``training_return`` split by target.

    Payments, contract costs, unsold information and unfulfilled lines all
    belong to exactly one target, so the parts add up to the episode value.
    """
    ledger = episode.ledger
    pay: dict[int, float] = {}
    for _, target, amount in ledger.payment_lines:
        pay[target] = pay.get(target, 0.0) + amount
    cost: dict[int, float] = {}
    for c in episode.contracts:
        cost[c.target] = cost.get(c.target, 0.0) + ledger.contract_costs.get(c.contract_id, 0.0)
    out = {}
    for target in set(pay) | set(cost) | set(ledger.fused_info) | set(ledger.unfulfilled):
        p, k = pay.get(target, 0.0), cost.get(target, 0.0)
        if role == DISTRIBUTOR:
            unsold = ledger.unsold_info.get(target, 0.0)
            out[target] = p - cfg.lambda_unsold * unsold - cfg.guidance * k
        else:
            missed = ledger.unfulfilled.count(target)
            out[target] = -k - cfg.lambda_unfulfilled * missed + cfg.guidance * p
    return out


def _credit(episode: Episode, role: str, returns: dict[int, float]) -> dict[int, float]:
    """Return to go of each of the role's decisions, in decision order."""
    mine = [d for d in episode.decisions if d.role == role]
    # targets left without a decision still count toward the last return to go
    decided = {d.target for d in mine}
    togo = sum(r for t, r in returns.items() if t not in decided)
    out = {}
    for d in reversed(mine):
        togo += returns.get(d.target, 0.0)
        out[id(d)] = togo
    return out


def episode_gradient(policies: PolicyPair, episode: Episode, role: str,
                     returns: dict[int, float], cfg: TrainConfig) -> np.ndarray:
    """The role's actor-critic gradient for one episode, summed over its decisions.

    Both roles decide one target at a time, so decision ``i`` is credited
    with the return to go, the sum of target returns from ``i`` onward,
    and the value of its graph serves as the baseline.
    """
    params = policies[role]
    credit = _credit(episode, role, returns)
    mine = [d for d in episode.decisions if d.role == role]
    grad = np.zeros(params.arch.size)
    for d in mine:
        ret = credit[id(d)]
        spec = LossSpec(d.action, d.mask, ret - d.value, ret, cfg.beta, cfg.value_coef,
                        d.extra_logits)
        _, dscores, dvalue, _ = decision_loss(d.scores, d.value, spec)
        grad += gnn_backward(params, d.graph, d.cache, dscores, dvalue)
    return grad


# -- global store ------------------------------------------------------------

@dataclass
class GlobalStore:
    policies: PolicyPair
    lr: float = 3e-2
    staleness: int = 4
    version: int = 0
    keep: int = 64
    history: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.history[self.version] = self.policies.copy()

    def snapshot(self) -> tuple[int, PolicyPair]:
        with self.lock:
            return self.version, self.policies.copy()

    def at(self, version: int) -> PolicyPair:
        with self.lock:
            if version not in self.history:
                raise KeyError(f"version {version} is no longer retained")
            return self.history[version].copy()


def push_merge(store: GlobalStore, grads: np.ndarray, role: str, base_version: int) -> int:
    """Apply ``params[role] -= lr * grads`` atomically and return the new version."""
    with store.lock:
        if base_version < store.version - store.staleness:
            raise StalePushError(base_version, store.version)
        target = store.policies[role]
        g = np.asarray(grads, dtype=np.float64)
        if g.shape != target.vector.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {target.vector.shape}")
        target.vector -= store.lr * g
        store.version += 1
        store.history[store.version] = store.policies.copy()
        for old in [v for v in store.history if v < store.version - store.keep]:
            del store.history[old]
        return store.version


# -- workers and training ----------------------------------------------------

@dataclass
class Worker:
    index: int
    role: str
    scale: float = 0.0
    seen: int = 0
    jobs_done: int = 0

    @property
    def name(self) -> str:
        return f"{self.role}{self.index}"

    def normalized(self, returns: dict[int, float], cfg: TrainConfig) -> dict[int, float]:
        if not cfg.normalize_rewards:
            return returns
        # plain running mean at first, then an exponential one
        for ret in returns.values():
            self.seen += 1
            self.scale += max(1.0 / self.seen, 0.01) * (abs(ret) - self.scale)
        if self.scale <= 1e-12:
            return returns
        return {t: r / self.scale for t, r in returns.items()}

    def run_job(self, policies: PolicyPair, scenarios: Sequence[Scenario], episode_ids,
                cfg: TrainConfig):
        """Episodes for one push: (mean gradient, [(episode id, stats)])."""
        grad = np.zeros(policies[self.role].arch.size)
        done = []
        for ep in episode_ids:
            s = scenarios[ep % len(scenarios)]
            rng = np.random.default_rng([cfg.seed, ep])
            try:
                episode = run_episode(s, policies, rng)
            except IsccError as exc:
                log.warning("episode %d aborted: %s", ep, exc)
                continue
            returns = self.normalized(target_returns(self.role, episode, cfg), cfg)
            grad += episode_gradient(policies, episode, self.role, returns, cfg)
            done.append((ep, episode.stats))
        self.jobs_done += 1
        if done:
            grad /= len(done)
        norm = float(np.linalg.norm(grad))
        if cfg.grad_clip and norm > cfg.grad_clip:
            grad *= cfg.grad_clip / norm
        return grad, done


@dataclass
class TrainResult:
    policies: PolicyPair
    curve: list[dict]
    merge_log: list[dict]
    episode_stats: list[tuple[int, EpisodeStats]]
    version: int = 0

    def curve_csv(self) -> str:
        return curve_csv(self.curve)

    def merge_log_json(self) -> str:
        return json.dumps(self.merge_log, indent=1) + "\n"


def learning_curve(stats: Sequence[EpisodeStats], window: int) -> list[dict]:
    rows = []
    for k in range(math.ceil(len(stats) / window)):
        m = EpisodeStats.mean(stats[k * window:(k + 1) * window])
        rows.append({"window": k, "mean_gross": m.gross, "mean_cost": m.cost,
                     "mean_net": m.net, "hit_rate": m.hit_rate, "reuse_rate": m.reuse_rate})
    return rows


def curve_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CURVE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _jobs(cfg: TrainConfig, n_workers: int) -> list[list[list[int]]]:
    """Episode ids per worker per job; episodes are dealt out job by job."""
    per = [[] for _ in range(n_workers)]
    ep, w = 0, 0
    while ep < cfg.total_episodes:
        chunk = list(range(ep, min(ep + cfg.episodes_per_push, cfg.total_episodes)))
        per[w].append(chunk)
        ep += len(chunk)
        w = (w + 1) % n_workers
    return per


def _round_robin_log(jobs: list[list[list[int]]]) -> list[dict]:
    """Cycles in which every worker pulls the same version, then pushes in order."""
    entries, version = [], 0
    rounds = max((len(j) for j in jobs), default=0)
    for r in range(rounds):
        base = version
        for w, worker_jobs in enumerate(jobs):
            if r < len(worker_jobs):
                entries.append({"worker": w, "job": r, "base_version": base, "accepted": True})
                version += 1
    return entries


def _check_divergence(store: GlobalStore, cfg: TrainConfig) -> None:
    for role in ROLES:
        mag = float(np.mean(np.abs(store.policies[role].vector)))
        if not np.isfinite(mag) or mag > cfg.divergence_bound:
            raise DivergenceError(f"{role} parameters diverged: mean |param| = {mag:.3g} "
                                  f"exceeds {cfg.divergence_bound:g} at version {store.version}")


def _make_workers(cfg: TrainConfig) -> list[Worker]:
    return ([Worker(i, DISTRIBUTOR) for i in range(cfg.workers_per_role)]
            + [Worker(i, PURCHASER) for i in range(cfg.workers_per_role)])


def train(cfg: TrainConfig, scenarios: Sequence[Scenario], merge_log: Sequence[dict] | None = None,
          initial: PolicyPair | None = None, checkpoint_dir: str | Path | None = None) -> TrainResult:
    """Run all workers until ``cfg.total_episodes`` episodes have been played.

    In replay mode the schedule comes from ``merge_log`` when given, else
    from the default round robin. Episode ``k`` always uses scenario
    ``k mod len(scenarios)`` and rng seed ``(cfg.seed, k)``.
    """
    if not scenarios and cfg.total_episodes:
        raise ValueError("training needs at least one scenario")
    policies = (initial or initial_policies(cfg)).copy()
    store = GlobalStore(policies, cfg.lr, cfg.staleness)
    workers = _make_workers(cfg)
    jobs = _jobs(cfg, len(workers))
    results: list[tuple[int, EpisodeStats]] = []
    applied: list[dict] = []

    def merge(worker, entry_job, base, grad, done):
        try:
            version = push_merge(store, grad, worker.role, base)
            accepted = True
        except StalePushError as exc:
            log.info("%s push from version %d rejected at %d", worker.name, base,
                     exc.current_version)
            version, accepted = store.version, False
        applied.append({"worker": workers.index(worker), "job": entry_job, "base_version": base,
                        "accepted": accepted, "version": version})
        results.extend(done)
        _check_divergence(store, cfg)

    if cfg.mode == REPLAY or merge_log is not None:
        schedule = list(merge_log) if merge_log is not None else _round_robin_log(jobs)
        for entry in schedule:
            worker = workers[entry["worker"]]
            base = entry["base_version"]
            grad, done = worker.run_job(store.at(base), scenarios, jobs[entry["worker"]][entry["job"]],
                                        cfg)
            merge(worker, entry["job"], base, grad, done)
    else:
        merge_lock = threading.Lock()
        errors: list[BaseException] = []

        def loop(worker: Worker):
            try:
                for j, episode_ids in enumerate(jobs[workers.index(worker)]):
                    base, snap = store.snapshot()
                    grad, done = worker.run_job(snap, scenarios, episode_ids, cfg)
                    with merge_lock:
                        merge(worker, j, base, grad, done)
            except BaseException as exc:  # surfaced in the caller
                errors.append(exc)

        threads = [threading.Thread(target=loop, args=(w,), name=w.name) for w in workers]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]

    results.sort(key=lambda x: x[0])
    curve = learning_curve([st for _, st in results], cfg.window)
    result = TrainResult(store.policies.copy(), curve, applied, results, store.version)
    if checkpoint_dir is not None:
        save_run(result, cfg, checkpoint_dir)
    return result


def save_run(result: TrainResult, cfg: TrainConfig, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for role in ROLES:
        (out / f"{role}.json").write_text(params_to_json(result.policies[role], role))
    (out / "learning_curve.csv").write_text(result.curve_csv())
    (out / "merge_log.json").write_text(result.merge_log_json())
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# -- evaluation --------------------------------------------------------------

def evaluate(policies: PolicyPair, scenarios: Sequence[Scenario], episodes: int | None = None,
             seed: int = 0):
    """Greedy play: ``(mean EpisodeStats, [ledger per episode])``.

    Episode ``k`` runs on scenario ``k mod len(scenarios)``; ``episodes``
    defaults to one pass over the set. An empty set gives ``(None, [])``.
    """
    if not scenarios:
        return None, []
    n = len(scenarios) if episodes is None else episodes
    ledgers, stats = [], []
    for k in range(n):
        ep = run_episode(scenarios[k % len(scenarios)], policies,
                         np.random.default_rng([seed, k]), greedy=True)
        ledgers.append(ep.ledger)
        stats.append(ep.stats)
    return EpisodeStats.mean(stats), ledgers
