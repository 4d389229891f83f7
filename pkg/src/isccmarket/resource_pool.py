"""Twin resource pool: time-space, time-frequency and time-computing grids.

Every grid is T rows (time slots) by some ordinate width:

* ``space``   one T x A grid per CAV (the CAV's own antenna time-angle plane)
* ``freq``    one T x F grid for the whole twin domain; a cell belongs to at
              most one transmitter at a time
* ``compute`` one T x C grid per site, ``("cav", id)`` for a local unit and
              ``("rsu", id)`` for an edge unit

A cell is free or holds a non-empty set of receipt ids. Several receipts
share a cell only through an explicit ``share_with`` request.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

from .errors import AllocationConflict, BoundsError, UnknownReceipt
from .scenario import Scenario

SPACE, FREQ, COMPUTE = "space", "freq", "compute"
KINDS = (SPACE, FREQ, COMPUTE)
TD = "td"

Cell = tuple[int, int]


def cav_site(cav_id: int) -> tuple[str, int]:
    return ("cav", cav_id)


def rsu_site(rsu_id: int) -> tuple[str, int]:
    return ("rsu", rsu_id)


@dataclass(frozen=True)
class BlockRequest:
    """A set of (time, ordinate) cells on one grid.

    ``owner`` is the CAV id for space and freq requests and a site tuple for
    compute requests. ``peer`` marks a freq request as a communication link
    toward that RSU.
    """

    pool_kind: str
    owner: Hashable
    cells: frozenset
    share_with: int | None = None
    peer: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "cells", frozenset((int(t), int(o)) for t, o in self.cells))

    @property
    def grid(self) -> tuple:
        return (FREQ, TD) if self.pool_kind == FREQ else (self.pool_kind, self.owner)


@dataclass(frozen=True)
class AllocationReceipt:
    receipt_id: int
    request: BlockRequest
    weighted_cost: float

    @property
    def shared(self) -> bool:
        return self.request.share_with is not None


class TwinResourcePool:
    def __init__(self, shapes: Mapping[tuple, tuple[int, int]], weights=(1.0, 1.0, 1.0)):
        self.shapes = dict(shapes)
        self.weights = dict(zip(KINDS, (float(w) for w in weights)))
        self.cells: dict[tuple, dict[Cell, set[int]]] = {g: {} for g in self.shapes}
        self.receipts: dict[int, AllocationReceipt] = {}
        self.log: list[tuple] = []
        self._next_id = 1

    # -- construction -------------------------------------------------------

    @classmethod
    def empty_like(cls, other: "TwinResourcePool") -> "TwinResourcePool":
        return cls(other.shapes, tuple(other.weights[k] for k in KINDS))

    def copy(self) -> "TwinResourcePool":
        return copy.deepcopy(self)

    # -- queries ------------------------------------------------------------

    def grids(self, kind: str) -> list[tuple]:
        return [g for g in self.shapes if g[0] == kind]

    def owners(self, cell_grid: tuple, cell: Cell) -> set[int]:
        return self.cells[cell_grid].get(cell, set())

    def is_free(self, grid: tuple, cell: Cell) -> bool:
        return cell not in self.cells[grid]

    def receipt(self, receipt_id: int) -> AllocationReceipt:
        try:
            return self.receipts[receipt_id]
        except KeyError:
            raise UnknownReceipt(f"unknown receipt {receipt_id}") from None

    def receipt_cells(self, receipt_id: int) -> set[tuple]:
        """Cells of a receipt as (grid, time, ordinate) triples."""
        req = self.receipt(receipt_id).request
        return {(req.grid, t, o) for t, o in req.cells}

    def comm_links(self, owner: int) -> list[AllocationReceipt]:
        """Live, non-shared communication allocations of a CAV."""
        return [r for _, r in sorted(self.receipts.items())
                if r.request.pool_kind == FREQ and r.request.owner == owner
                and r.request.peer is not None and not r.shared]

    # -- mutation -----------------------------------------------------------

    def _check_bounds(self, req: BlockRequest) -> None:
        grid = req.grid
        if req.pool_kind not in KINDS:
            raise BoundsError(f"unknown pool kind {req.pool_kind!r}")
        if grid not in self.shapes:
            raise BoundsError(f"no {req.pool_kind} grid for owner {req.owner!r}")
        if not req.cells:
            raise BoundsError("empty request")
        T, W = self.shapes[grid]
        bad = [c for c in req.cells if not (0 <= c[0] < T and 0 <= c[1] < W)]
        if bad:
            raise BoundsError(f"cells out of range for {grid} ({T}x{W}): {sorted(bad)}")

    def allocate(self, req: BlockRequest) -> AllocationReceipt:
        """Allocate all requested cells or none of them."""
        self._check_bounds(req)
        grid = self.cells[req.grid]
        if req.share_with is not None:
            base = self.receipt(req.share_with).request
            if base.pool_kind != req.pool_kind or base.owner != req.owner:
                raise AllocationConflict(req.cells, "sharing requires identical pool kind and owner")
            foreign = req.cells - base.cells
            if foreign:
                raise AllocationConflict(foreign, f"cells not held by receipt {req.share_with}")
            cost = 0.0
        else:
            taken = [c for c in req.cells if c in grid]
            if taken:
                raise AllocationConflict(taken)
            cost = self.weights[req.pool_kind] * len(req.cells)
        rid = self._next_id
        self._next_id += 1
        for c in req.cells:
            grid.setdefault(c, set()).add(rid)
        receipt = AllocationReceipt(rid, req, cost)
        self.receipts[rid] = receipt
        self.log.append(("allocate", req))
        return receipt

    def release(self, receipt_id: int) -> "TwinResourcePool":
        receipt = self.receipt(receipt_id)
        grid = self.cells[receipt.request.grid]
        for c in receipt.request.cells:
            holders = grid[c]
            holders.discard(receipt_id)
            if not holders:
                del grid[c]
        del self.receipts[receipt_id]
        self.log.append(("release", receipt_id))
        return self

    # -- reporting ----------------------------------------------------------

    def utilization(self) -> dict[str, float]:
        out = {}
        for kind in KINDS:
            total = used = 0
            for g in self.grids(kind):
                T, W = self.shapes[g]
                total += T * W
                used += len(self.cells[g])
            out[kind] = used / total if total else 0.0
        return out

    def dump(self) -> dict:
        """JSON-ready per-grid cell -> receipt map."""
        grids = {}
        for g in sorted(self.shapes, key=_grid_label):
            grids[_grid_label(g)] = {
                "shape": list(self.shapes[g]),
                "cells": {f"{t},{o}": sorted(rids) for (t, o), rids in sorted(self.cells[g].items())},
            }
        receipts = {
            str(rid): {"kind": r.request.pool_kind, "owner": _owner_label(r.request.owner),
                       "cells": sorted(map(list, r.request.cells)),
                       "share_with": r.request.share_with, "peer": r.request.peer,
                       "weighted_cost": r.weighted_cost}
            for rid, r in sorted(self.receipts.items())}
        return {"grids": grids, "receipts": receipts, "next_receipt": self._next_id}

    def dumps(self) -> str:
        return json.dumps(self.dump(), sort_keys=True)


def _owner_label(owner) -> str:
    if isinstance(owner, tuple):
        return f"{owner[0]}:{owner[1]}"
    return str(owner)


def _grid_label(grid: tuple) -> str:
    return f"{grid[0]}/{_owner_label(grid[1])}"


def new_pool(s: Scenario, compute_capacities: Mapping[tuple, int] | None = None) -> TwinResourcePool:
    """Fresh pool shaped by the scenario.

    ``compute_capacities`` maps a site tuple to its compute-grid width and
    defaults to the scenario's local/edge compute unit counts.
    """
    T = s.time_horizon
    caps = {cav_site(c.id): c.local_compute_units for c in s.cavs}
    caps.update({rsu_site(r.id): r.edge_compute_units for r in s.rsus})
    if compute_capacities is not None:
        for site, cap in compute_capacities.items():
            if site not in caps:
                raise BoundsError(f"unknown compute site {site!r}")
            if cap <= 0:
                raise ValueError(f"compute capacity for {site!r} must be positive")
            caps[site] = int(cap)
    shapes: dict[tuple, tuple[int, int]] = {}
    for c in s.cavs:
        shapes[(SPACE, c.id)] = (T, s.angle_sectors)
    shapes[(FREQ, TD)] = (T, s.subcarriers)
    for site, cap in caps.items():
        shapes[(COMPUTE, site)] = (T, cap)
    return TwinResourcePool(shapes, s.market.weights)


def replay(template: TwinResourcePool, log: Iterable[tuple]) -> TwinResourcePool:
    """Rebuild a pool by re-applying an allocate/release log on an empty copy."""
    pool = TwinResourcePool.empty_like(template)
    for op, arg in log:
        if op == "allocate":
            pool.allocate(arg)
        else:
            pool.release(arg)
    return pool
