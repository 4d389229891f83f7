"""Message-passing policy/value network with hand-written reverse mode.

Per layer ``l``::

    m_uv = MLP_msg(h_u ++ e_uv)              one message per directed edge
    a_v  = mean_{u in N(v)} m_uv             zero vector for isolated vertices
    h_v' = MLP_upd(h_v ++ a_v)

Readout: ``score_v = head_p(h_v)`` and ``value = head_v(mean_v h_v)``.
Hidden units use tanh; both heads end in a linear unit. Everything runs in
float64 so finite differences can validate the analytic gradients.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, ShapeError, StaleCacheError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GnnArch:
    d_v: int
    hidden: int = 32
    layers: int = 2
    d_e: int = 1
    mlp_depth: int = 2

    def __post_init__(self):
        if min(self.d_v, self.hidden, self.layers, self.d_e, self.mlp_depth) < 1:
            raise ShapeError(f"every architecture dimension must be >= 1: {self}")

    def mlps(self) -> list[tuple[str, list[int]]]:
        h = self.hidden
        deep = [h] * self.mlp_depth
        out = []
        for layer in range(self.layers):
            d_in = self.d_v if layer == 0 else h
            out.append((f"L{layer}.msg", [d_in + self.d_e] + deep))
            out.append((f"L{layer}.upd", [d_in + h] + deep))
        out.append(("head_p", [h] + [h] * (self.mlp_depth - 1) + [1]))
        out.append(("head_v", [h] + [h] * (self.mlp_depth - 1) + [1]))
        return out

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        entries = []
        for name, dims in self.mlps():
            for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                entries.append((f"{name}.W{k}", (a, b)))
                entries.append((f"{name}.b{k}", (b,)))
        return entries

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    def to_dict(self) -> dict:
        return {"d_v": self.d_v, "hidden": self.hidden, "layers": self.layers,
                "d_e": self.d_e, "mlp_depth": self.mlp_depth}


@dataclass
class PolicyParams:
    arch: GnnArch
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (self.arch.size,):
            raise ShapeError(f"parameter vector has shape {self.vector.shape}, "
                             f"layout needs ({self.arch.size},)")

    def views(self) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, shape in self.arch.layout():
            n = int(np.prod(shape))
            out[name] = self.vector[pos:pos + n].reshape(shape)
            pos += n
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.vector.copy())


@dataclass
class Grads:
    vector: np.ndarray
    loss: float = 0.0
    entropy: float = 0.0


def init_params(arch: GnnArch, seed: int) -> PolicyParams:
    """Uniform(-a, a) per layer with a = sqrt(6 / (fan_in + fan_out)); biases included."""
    rng = np.random.default_rng(seed)
    chunks = []
    bound = None
    for name, shape in arch.layout():
        if len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return PolicyParams(arch, np.concatenate(chunks))


# -- dense stacks -------------------------------------------------------------

def _mlp_forward(p, name, depth, x, linear_out):
    caches = []
    for k in range(depth):
        z = x @ p[f"{name}.W{k}"] + p[f"{name}.b{k}"]
        last = k == depth - 1
        y = z if (last and linear_out) else np.tanh(z)
        caches.append((x, y, last and linear_out))
        x = y
    return x, caches


def _mlp_backward(p, g, name, caches, dy):
    for k in range(len(caches) - 1, -1, -1):
        x, y, linear = caches[k]
        dz = dy if linear else dy * (1.0 - y * y)
        g[f"{name}.W{k}"] += x.T @ dz
        g[f"{name}.b{k}"] += dz.sum(axis=0)
        dy = dz @ p[f"{name}.W{k}"].T
    return dy


def _digest(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class ForwardCache:
    params_digest: str
    graph_digest: str
    layers: list = field(default_factory=list)
    head_p: list = field(default_factory=list)
    head_v: list = field(default_factory=list)
    n: int = 0


def graph_arrays(graph):
    """(features, src, dst, edge_features) with both directions of every edge."""
    x = np.asarray(graph.features, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(len(x), -1)
    edges = list(graph.edges)
    if edges:
        a = np.array([e[0] for e in edges], dtype=np.int64)
        b = np.array([e[1] for e in edges], dtype=np.int64)
        f = np.array([e[2] for e in edges], dtype=np.float64)
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        ef = np.concatenate([f, f]).reshape(-1, 1)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        ef = np.zeros((0, 1))
    return x, src, dst, ef


def gnn_forward(params: PolicyParams, graph):
    """Per-vertex policy scores, the graph value, and the activation cache."""
    arch = params.arch
    x, src, dst, ef = graph_arrays(graph)
    n = x.shape[0]
    if n and x.shape[1] != arch.d_v:
        raise ShapeError(f"vertex features have dim {x.shape[1]}, architecture expects {arch.d_v}")
    if n == 0:
        x = np.zeros((0, arch.d_v))
    if ef.shape[1] != arch.d_e:
        raise ShapeError(f"edge features have dim {ef.shape[1]}, architecture expects {arch.d_e}")
    p = params.views()
    h = arch.hidden
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
    cache = ForwardCache(_digest(params.vector), _digest(x, src, dst, ef), n=n)
    H = x
    for layer in range(arch.layers):
        if len(src):
            m, mc = _mlp_forward(p, f"L{layer}.msg", arch.mlp_depth,
                                 np.concatenate([H[src], ef], axis=1), False)
            agg = np.zeros((n, h))
            np.add.at(agg, dst, m)
            agg *= inv[:, None]
        else:
            mc = None
            agg = np.zeros((n, h))
        H, uc = _mlp_forward(p, f"L{layer}.upd", arch.mlp_depth,
                             np.concatenate([H, agg], axis=1), False)
        cache.layers.append((mc, uc, src, dst, inv))
    scores, cache.head_p = _mlp_forward(p, "head_p", arch.mlp_depth, H, True)
    pooled = H.mean(axis=0, keepdims=True) if n else np.zeros((1, h))
    value, cache.head_v = _mlp_forward(p, "head_v", arch.mlp_depth, pooled, True)
    return scores[:, 0].copy(), float(value[0, 0]), cache


def gnn_backward(params: PolicyParams, graph, cache: ForwardCache,
                 dscores: np.ndarray, dvalue: float) -> np.ndarray:
    """Gradient of ``sum(dscores * scores) + dvalue * value`` w.r.t. every parameter."""
    arch = params.arch
    x, src, dst, ef = graph_arrays(graph)
    if cache.n == 0:
        x = np.zeros((0, arch.d_v))
    if _digest(params.vector) != cache.params_digest or _digest(x, src, dst, ef) != cache.graph_digest:
        raise StaleCacheError("cache does not belong to these parameters and this graph")
    p = params.views()
    grad = np.zeros_like(params.vector)
    g = PolicyParams(arch, grad).views()
    n, h = cache.n, arch.hidden
    dscores = np.asarray(dscores, dtype=np.float64).reshape(n, 1)
    dH = _mlp_backward(p, g, "head_p", cache.head_p, dscores)
    dpool = _mlp_backward(p, g, "head_v", cache.head_v, np.array([[float(dvalue)]]))
    if n:
        dH = dH + dpool / n
    for layer in range(arch.layers - 1, -1, -1):
        mc, uc, src, dst, inv = cache.layers[layer]
        d_in = arch.d_v if layer == 0 else h
        dU = _mlp_backward(p, g, f"L{layer}.upd", uc, dH)
        dH_prev = dU[:, :d_in].copy()
        if mc is not None:
            dagg = dU[:, d_in:] * inv[:, None]
            dinp = _mlp_backward(p, g, f"L{layer}.msg", mc, dagg[dst])
            np.add.at(dH_prev, src, dinp[:, :d_in])
        dH = dH_prev
    return grad


# -- policy head losses -------------------------------------------------------

def policy_distribution(scores, mask, required: bool = False) -> np.ndarray:
    """Softmax over the feasible entries; infeasible entries get probability 0."""
    z = np.asarray(scores, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if z.shape != m.shape:
        raise ShapeError(f"scores {z.shape} and mask {m.shape} differ")
    probs = np.zeros_like(z)
    if not m.any():
        if required:
            raise FeasibilityError("no feasible action to choose from")
        return probs
    zz = z[m] - z[m].max()
    e = np.exp(zz)
    probs[m] = e / e.sum()
    return probs


@dataclass(frozen=True)
class LossSpec:
    """Scalar loss of one decision.

    ``-log pi(action) * advantage - beta * entropy + value_coef * (value - target)**2``
    over the logits ``scores ++ extra_logits`` restricted to ``mask``; the
    advantage is treated as a constant.
    """

    action: int
    mask: tuple
    advantage: float
    target: float
    beta: float = 0.0
    value_coef: float = 0.0
    extra_logits: tuple = ()


def decision_loss(scores, value, spec: LossSpec):
    """(loss, dloss/dscores, dloss/dvalue, entropy)."""
    z = np.concatenate([np.asarray(scores, dtype=np.float64), np.asarray(spec.extra_logits, float)])
    mask = np.asarray(spec.mask, dtype=bool)
    probs = policy_distribution(z, mask, required=True)
    if not mask[spec.action]:
        raise FeasibilityError(f"action {spec.action} is masked out")
    logp = np.zeros_like(z)
    logp[mask] = np.log(probs[mask])
    entropy = float(-(probs[mask] * logp[mask]).sum())
    err = value - spec.target
    loss = -logp[spec.action] * spec.advantage - spec.beta * entropy + spec.value_coef * err * err
    onehot = np.zeros_like(z)
    onehot[spec.action] = 1.0
    dz = -spec.advantage * (onehot - probs) + spec.beta * probs * (logp + entropy)
    dz[~mask] = 0.0
    return float(loss), dz[:len(scores)], 2.0 * spec.value_coef * err, entropy


def backward(params: PolicyParams, graph, cached: ForwardCache, spec: LossSpec,
             scores=None, value=None) -> Grads:
    """Exact gradient of one decision's loss, reusing the forward cache."""
    if scores is None or value is None:
        scores, value, fresh = gnn_forward(params, graph)
        if fresh.params_digest != cached.params_digest or fresh.graph_digest != cached.graph_digest:
            raise StaleCacheError("cache does not belong to these parameters and this graph")
    loss, dscores, dvalue, entropy = decision_loss(scores, value, spec)
    return Grads(gnn_backward(params, graph, cached, dscores, dvalue), loss, entropy)


def loss_value(params: PolicyParams, graph, spec: LossSpec) -> float:
    scores, value, _ = gnn_forward(params, graph)
    return decision_loss(scores, value, spec)[0]


# -- checkpoints --------------------------------------------------------------

def params_to_json(params: PolicyParams, role: str | None = None) -> str:
    doc = {"version": CHECKPOINT_VERSION, "role": role, "arch": params.arch.to_dict(),
           "layout": [[name, list(shape)] for name, shape in params.arch.layout()],
           "vector": [float(v) for v in params.vector]}
    return json.dumps(doc) + "\n"


def params_from_json(text: str) -> PolicyParams:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {doc.get('version')!r}")
    arch = GnnArch(**doc["arch"])
    layout = [(name, tuple(shape)) for name, shape in doc["layout"]]
    if layout != arch.layout():
        raise ShapeError("checkpoint layout does not match its architecture")
    return PolicyParams(arch, np.array(doc["vector"], dtype=np.float64))


def linear_scorer_params(arch: GnnArch, weights, bias: float = 0.0, gain: float = 1e3,
                         scale: float = 1e-2) -> PolicyParams:
    """Hand-built parameters whose vertex scores are ``gain * g(weights . x + bias)``.

    ``g`` is an odd, strictly increasing squashing, so the scores rank
    vertices exactly like the linear form and keep its sign. Messages are
    switched off, which makes every vertex score independent of its
    neighbours. Used to pin a known action sequence in evaluation tests.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (arch.d_v,):
        raise ShapeError(f"need {arch.d_v} weights, got {w.shape}")
    params = PolicyParams(arch, np.zeros(arch.size))
    p = params.views()
    # hidden unit 0 carries the linear form through every layer
    p["L0.upd.W0"][:arch.d_v, 0] = scale * w
    p["L0.upd.b0"][0] = scale * bias
    for layer in range(arch.layers):
        start = 1 if layer == 0 else 0
        for k in range(start, arch.mlp_depth):
            p[f"L{layer}.upd.W{k}"][0, 0] = 1.0
        if layer > 0:
            p[f"L{layer}.upd.W0"][0, 0] = 1.0
    for k in range(arch.mlp_depth - 1):
        p[f"head_p.W{k}"][0, 0] = 1.0
    p[f"head_p.W{arch.mlp_depth - 1}"][0, 0] = gain
    return params
