"""Graph views of a round's employment relationships.

1. ``build_flow_graph``: CAV and RSU nodes, edges follow information flow
   employee -> RSU -> employer; self-employment is a self-loop.
2. ``fold_rsus``: RSU nodes are folded into edge attributes, leaving a CAV-only
   multigraph with one edge per contract.
3. ``build_employment_graph``: contracts become vertices; edges carry the
   role's overlap measure (repeated information for the distributor, reused
   cells for the purchaser) or 0 when two contracts merely share a CAV.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import StructureError
from .market import EmploymentContract, ExecutionReport, contract_cells
from .process_models import PWS
from .resource_pool import TwinResourcePool

DISTRIBUTOR, PURCHASER = "distributor", "purchaser"
ROLES = (DISTRIBUTOR, PURCHASER)
VERTEX_FEATURES = ("info", "cost", "info_value", "q_ord", "pws", "self_employment")


def build_flow_graph(contracts: Iterable[EmploymentContract]) -> nx.MultiDiGraph:
    fg = nx.MultiDiGraph()
    for c in contracts:
        src, dst = ("cav", c.employee), ("cav", c.employer)
        fg.add_node(src, kind="cav")
        fg.add_node(dst, kind="cav")
        if c.rsu is None:
            fg.add_edge(src, dst, key=c.contract_id, contract=c.contract_id)
        else:
            hub = ("rsu", c.rsu)
            fg.add_node(hub, kind="rsu")
            fg.add_edge(src, hub, key=c.contract_id, contract=c.contract_id)
            fg.add_edge(hub, dst, key=c.contract_id, contract=c.contract_id)
    return fg


def fold_rsus(fg: nx.MultiDiGraph) -> nx.MultiDiGraph:
    """Collapse every employee -> RSU -> employer path into one CAV edge."""
    cg = nx.MultiDiGraph()
    for node, data in fg.nodes(data=True):
        if data.get("kind") == "cav":
            cg.add_node(node[1])
    for u, v, k in fg.edges(keys=True):
        if fg.nodes[u]["kind"] == "cav" and fg.nodes[v]["kind"] == "cav":
            cg.add_edge(u[1], v[1], key=k, contract=k, rsu=None)
    for node, data in fg.nodes(data=True):
        if data.get("kind") != "rsu":
            continue
        inbound = {k: u for u, _, k in fg.in_edges(node, keys=True)}
        outbound = {k: v for _, v, k in fg.out_edges(node, keys=True)}
        if inbound.keys() != outbound.keys():
            dangling = sorted(inbound.keys() ^ outbound.keys())
            raise StructureError(f"RSU {node[1]} has dangling paths for contracts {dangling}")
        for k in sorted(inbound):
            cg.add_edge(inbound[k][1], outbound[k][1], key=k, contract=k, rsu=node[1])
    return cg


@dataclass
class EmploymentGraph:
    role: str
    contract_ids: list[int]
    features: np.ndarray
    # undirected, i < j, (i, j, feature)
    edges: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")

    @property
    def n(self) -> int:
        return len(self.contract_ids)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for i, cid in enumerate(self.contract_ids):
            g.add_node(cid, features=tuple(float(x) for x in self.features[i]))
        for i, j, f in self.edges:
            g.add_edge(self.contract_ids[i], self.contract_ids[j], feature=f)
        return g

    def to_text(self) -> str:
        """Edge list ``(v1, v2, feature)`` followed by the vertex feature table."""
        lines = [f"# role {self.role}", "# edges"]
        for i, j, f in self.edges:
            lines.append(f"({self.contract_ids[i]}, {self.contract_ids[j]}, {f!r})")
        width = self.features.shape[1] if self.features.ndim == 2 else 0
        names = VERTEX_FEATURES if width == len(VERTEX_FEATURES) else [f"f{k}" for k in range(width)]
        lines.append("# vertices: contract " + " ".join(names))
        for i, cid in enumerate(self.contract_ids):
            lines.append(" ".join([str(cid)] + [repr(float(x)) for x in self.features[i]]))
        return "\n".join(lines) + "\n"


def _infos(contract_id: int, report: ExecutionReport) -> dict[int, float]:
    out: dict[int, float] = defaultdict(float)
    rec = report.outcome(contract_id).record
    if rec is not None:
        out[rec.target_id] += rec.info
    return out


def repeated_information(c1: EmploymentContract, c2: EmploymentContract,
                         report: ExecutionReport) -> float:
    a, b = _infos(c1.contract_id, report), _infos(c2.contract_id, report)
    return float(sum(min(a[t], b[t]) for t in a.keys() & b.keys()))


def reused_resources(c1: EmploymentContract, c2: EmploymentContract,
                     pool: TwinResourcePool) -> int:
    return len(contract_cells(pool, c1) & contract_cells(pool, c2))


def vertex_features(c: EmploymentContract, report: ExecutionReport) -> list[float]:
    out = report.outcome(c.contract_id)
    info = out.record.info if out.record is not None else 0.0
    return [info, out.cost, report.target_values.get(c.target, 0.0), c.q_ord,
            1.0 if c.mode == PWS else 0.0, 1.0 if c.self_employment else 0.0]


def build_employment_graph(contracts: Sequence[EmploymentContract], report: ExecutionReport,
                           role: str, pool: TwinResourcePool | None = None) -> EmploymentGraph:
    """Contracts as vertices.

    Two contracts are joined when the role feature is positive or when they
    share an employer/employee CAV (feature 0 in that case). The purchaser
    feature counts shared cells, read from ``pool`` when given and from the
    cells recorded in ``report`` otherwise.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    ordered = sorted(contracts, key=lambda c: c.contract_id)
    feats = np.array([vertex_features(c, report) for c in ordered], dtype=np.float64)
    if not ordered:
        feats = np.zeros((0, len(VERTEX_FEATURES)))
    cells = {c.contract_id: (contract_cells(pool, c) if pool is not None
                             else report.outcome(c.contract_id).cells) for c in ordered}
    edges = []
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            if role == DISTRIBUTOR:
                f = repeated_information(a, b, report)
            else:
                f = float(len(cells[a.contract_id] & cells[b.contract_id]))
            if f > 0 or a.cavs & b.cavs:
                edges.append((i, j, f))
    return EmploymentGraph(role, [c.contract_id for c in ordered], feats, edges)
