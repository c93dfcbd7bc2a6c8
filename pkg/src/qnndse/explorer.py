"""Greedy folding search and pareto filtering.

The search starts from the unfolded design (PE = SIMD = M = 1) and
repeatedly speeds up the bottleneck layer. Among the bottleneck's next
SIMD step and next PE step (next larger divisor of C resp. C') it applies
the feasible move with the best II reduction per added LUT; ties go to the
smaller LUT increase, then SIMD before PE. When the bottleneck has no
feasible move, the global multi-vector count M is raised instead. This rule
is a deterministic stand-in for "scale the bottleneck", not a known-optimal
search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .costmodel import (
    CostTable,
    DeviceModel,
    FoldingConfig,
    LayerFold,
    ResourceEstimate,
    estimate_network,
    layer_resources,
    summarize,
)
from .errors import DeviceUnsuitableError
from .perfmodel import PerfEstimate, bottleneck, estimate_perf, layer_ii
from .topology import NetworkTopology


@dataclass(frozen=True)
class ExploreGoal:
    utilization_cap: float = 0.8
    clock_hz: float = 250e6
    target_fps: float | None = None
    max_m: int = 8

    def __post_init__(self):
        if not 0 < self.utilization_cap <= 1:
            raise ValueError(f"utilization_cap must be in (0, 1], got {self.utilization_cap}")
        if self.max_m < 1:
            raise ValueError("max_m must be >= 1")


@dataclass(frozen=True)
class Move:
    kind: str  # "simd", "pe" or "m"
    layer: int | None  # conv-like layer position, None for M
    old: int
    new: int
    delta_ii: int = 0
    delta_lut: int = 0

    def describe(self) -> str:
        if self.kind == "m":
            return f"M {self.old}->{self.new}"
        return f"layer {self.layer} {self.kind.upper()} {self.old}->{self.new}"


@dataclass
class ExploreResult:
    folding: FoldingConfig
    resources: ResourceEstimate
    perf: PerfEstimate
    trace: list[Move] = field(default_factory=list)
    reached_target: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "folding": self.folding.to_dict(),
            "resources": self.resources.to_dict(),
            "perf": self.perf.to_dict(),
            "trace": [m.__dict__.copy() for m in self.trace],
            "reached_target": self.reached_target,
        }


def minimal_folding(topo: NetworkTopology) -> FoldingConfig:
    return FoldingConfig.minimal(topo)


def next_divisor(n: int, current: int) -> int | None:
    """Smallest divisor of ``n`` greater than ``current``."""
    for d in range(current + 1, n + 1):
        if n % d == 0:
            return d
    return None


class _Search:
    """Incremental evaluation state; only the touched layer is recomputed."""

    def __init__(self, topo, dev, table, goal, mode):
        self.topo = topo
        self.dev = dev
        self.table = table
        self.goal = goal
        self.mode = mode
        self.layers = topo.compute_layers
        self.indices = topo.compute_indices

    def resources(self, i, fold: LayerFold, m):
        return layer_resources(self.layers[i], self.indices[i], fold, m, self.dev, self.table, self.mode)

    def feasible(self, est: ResourceEstimate) -> bool:
        return est.feasible(self.goal.utilization_cap)

    def candidates(self, fold: FoldingConfig, per_layer, b: int) -> list[tuple[Move, list, ResourceEstimate]]:
        """Feasible bottleneck moves with their resulting resources."""
        layer = self.layers[b]
        cur = fold.per_layer[b]
        old_ii = layer_ii(layer, cur)
        old_luts = sum(r.luts for r in per_layer)
        out = []
        for kind in ("simd", "pe"):
            if kind == "simd":
                nxt = next_divisor(layer.c, cur.simd)
                new_fold = LayerFold(cur.pe, nxt) if nxt else None
                old = cur.simd
            else:
                nxt = next_divisor(layer.c_out, cur.pe)
                new_fold = LayerFold(nxt, cur.simd) if nxt else None
                old = cur.pe
            if new_fold is None:
                continue
            trial = list(per_layer)
            trial[b] = self.resources(b, new_fold, fold.m)
            est = summarize(trial, self.dev)
            if not self.feasible(est):
                continue
            move = Move(kind, b, old, nxt, old_ii - layer_ii(layer, new_fold), est.lut_total - old_luts)
            out.append((move, trial, est))
        return out

    def m_candidate(self, fold: FoldingConfig):
        if fold.m >= self.goal.max_m:
            return None
        m = fold.m + 1
        trial = [self.resources(i, f, m) for i, f in enumerate(fold.per_layer)]
        est = summarize(trial, self.dev)
        if not self.feasible(est):
            return None
        old_luts = sum(self.resources(i, f, fold.m).luts for i, f in enumerate(fold.per_layer))
        return Move("m", None, fold.m, m, 0, est.lut_total - old_luts), trial, est


def _rank(move: Move):
    # best II gain per LUT first; zero-LUT moves rank as infinitely good
    ratio = Fraction(move.delta_ii, move.delta_lut) if move.delta_lut > 0 else Fraction(10**30)
    return (-ratio, move.delta_lut, 0 if move.kind == "simd" else 1)


def explore(topo: NetworkTopology, dev: DeviceModel, table: CostTable,
            goal: ExploreGoal = ExploreGoal(), mode: str = "faithful") -> ExploreResult:
    """Greedy bottleneck scaling under the utilization cap."""
    search = _Search(topo, dev, table, goal, mode)
    fold = minimal_folding(topo)
    est = estimate_network(topo, fold, dev, table, mode)
    bad = est.violations(goal.utilization_cap)
    if bad:
        detail = ", ".join(
            f"{r} {getattr(est, r + '_fraction'):.1%} > {goal.utilization_cap:.0%}" for r in bad
        )
        raise DeviceUnsuitableError(
            f"device unsuitable for topology: minimal design exceeds {detail}", bad
        )
    per_layer = list(est.per_layer)
    trace: list[Move] = []
    reached = False
    while True:
        perf = estimate_perf(topo, fold, goal.clock_hz)
        if goal.target_fps is not None and perf.fps >= goal.target_fps:
            reached = True
            break
        b = bottleneck(perf.per_layer_ii)
        cands = search.candidates(fold, per_layer, b)
        if cands:
            move, per_layer, est = min(cands, key=lambda c: _rank(c[0]))
            new = (LayerFold(fold.per_layer[b].pe, move.new) if move.kind == "simd"
                   else LayerFold(move.new, fold.per_layer[b].simd))
            fold = fold.with_layer(b, new)
        else:
            mc = search.m_candidate(fold)
            if mc is None:
                break
            move, per_layer, est = mc
            fold = fold.with_m(move.new)
        trace.append(move)
    return ExploreResult(fold, est, perf, trace, reached)


def pending_moves(topo: NetworkTopology, fold: FoldingConfig, dev: DeviceModel,
                  table: CostTable, goal: ExploreGoal, mode: str = "faithful") -> list[Move]:
    """Feasible moves available from ``fold`` under the search's move set.

    An empty list means ``fold`` is a fixed point of :func:`explore`.
    """
    search = _Search(topo, dev, table, goal, mode)
    est = estimate_network(topo, fold, dev, table, mode)
    perf = estimate_perf(topo, fold, goal.clock_hz)
    b = bottleneck(perf.per_layer_ii)
    moves = [c[0] for c in search.candidates(fold, list(est.per_layer), b)]
    mc = search.m_candidate(fold)
    if mc is not None:
        moves.append(mc[0])
    return moves


# -- pareto ------------------------------------------------------------------


@dataclass(frozen=True)
class ParetoRecord:
    label: str
    error_rate: float
    hw_cost: float

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error_rate must be in [0, 1], got {self.error_rate}")


def dominates(p: ParetoRecord, q: ParetoRecord, higher_is_better: bool = True) -> bool:
    if higher_is_better:
        cost_ok, cost_strict = p.hw_cost >= q.hw_cost, p.hw_cost > q.hw_cost
    else:
        cost_ok, cost_strict = p.hw_cost <= q.hw_cost, p.hw_cost < q.hw_cost
    return p.error_rate <= q.error_rate and cost_ok and (p.error_rate < q.error_rate or cost_strict)


def pareto_front(records: Iterable[ParetoRecord], higher_is_better: bool = True) -> list[ParetoRecord]:
    """Non-dominated records, sorted by ascending cost.

    Sweep from the best cost to the worst; a record survives if no record
    with strictly better cost has error <= its own and no record with equal
    cost has strictly lower error.
    """
    recs = list(records)
    if not recs:
        return []
    sign = -1 if higher_is_better else 1
    order = sorted(recs, key=lambda r: (sign * r.hw_cost, r.error_rate))
    front = []
    best_better = math.inf  # min error among strictly better costs
    i = 0
    while i < len(order):
        j = i
        key = order[i].hw_cost
        while j < len(order) and order[j].hw_cost == key:
            j += 1
        group = order[i:j]
        group_best = group[0].error_rate
        for r in group:
            if r.error_rate < best_better and r.error_rate == group_best:
                front.append(r)
        best_better = min(best_better, group_best)
        i = j
    front.sort(key=lambda r: (r.hw_cost, r.error_rate, r.label))
    return front
