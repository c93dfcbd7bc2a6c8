"""Throughput / latency prediction and roofline curves."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .costmodel import CostTable, DeviceModel, FoldingConfig, LayerFold, check_fold, check_folding
from .errors import FoldingError
from .topology import LayerSpec, NetworkTopology, mac_count

DEFAULT_UTILIZATION_CAP = 0.8


def layer_ii(layer: LayerSpec, fold: LayerFold) -> int:
    """Cycles for one batch of M output maps: n_out^2 * (K^2*C/SIMD) * (C'/PE)."""
    check_fold(layer, fold)
    return layer.n_out ** 2 * (layer.k * layer.k * layer.c // fold.simd) * (layer.c_out // fold.pe)


@dataclass(frozen=True)
class PerfEstimate:
    per_layer_ii: tuple[int, ...]
    bottleneck_index: int  # position among conv-like layers
    fps: float
    latency: float  # seconds, serial bound
    clock_hz: float
    m: int = 1

    @property
    def max_ii(self) -> int:
        return self.per_layer_ii[self.bottleneck_index]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_layer_ii"] = list(self.per_layer_ii)
        return d

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PerfEstimate":
        return cls(tuple(doc["per_layer_ii"]), doc["bottleneck_index"], doc["fps"],
                   doc["latency"], doc["clock_hz"], doc.get("m", 1))


def bottleneck(iis: Sequence[int]) -> int:
    """Index of the largest II; ties resolve to the lowest index."""
    best = 0
    for i, v in enumerate(iis):
        if v > iis[best]:
            best = i
    return best


def estimate_perf(topo: NetworkTopology, fold: FoldingConfig, clock_hz: float) -> PerfEstimate:
    layers = topo.compute_layers
    if not layers:
        raise FoldingError("topology has no conv-like layers")
    check_folding(topo, fold)
    iis = tuple(layer_ii(l, f) for l, f in zip(layers, fold.per_layer))
    b = bottleneck(iis)
    return PerfEstimate(iis, b, fold.m * clock_hz / iis[b], sum(iis) / clock_hz, clock_hz, fold.m)


def compute_bound_fps(topo: NetworkTopology, dev: DeviceModel, table: CostTable, clock_hz,
                      utilization_cap=DEFAULT_UTILIZATION_CAP, exact: bool = False):
    """Upper bound on fps if every usable LUT computes MACs.

    LUTs are shared in proportion to each layer's work, so every layer
    finishes an image in the same time. Returns a ``Fraction`` when
    ``exact`` is set.
    """
    luts_per_image = sum(
        mac_count(l) * Fraction(str(table.f(l.a_bits, l.w_bits))) for l in topo.compute_layers
    )
    fps = Fraction(dev.lut_budget) * Fraction(str(utilization_cap)) * Fraction(str(clock_hz)) / luts_per_image
    return fps if exact else float(fps)


@dataclass(frozen=True)
class RooflineCurve:
    label: str
    a_bits: int
    w_bits: int
    compute_peak: float  # ops/s
    ridge_ai: float  # ops/byte
    points: tuple[tuple[float, float], ...]  # (arithmetic intensity, attainable ops/s)

    def attainable(self, ai: float) -> float:
        return min(self.compute_peak, ai * self.ridge_bandwidth)

    @property
    def ridge_bandwidth(self) -> float:
        return self.compute_peak / self.ridge_ai


def compute_peak(dev: DeviceModel, table: CostTable, a_bits: int, w_bits: int, clock_hz: float,
                 utilization_cap: float = DEFAULT_UTILIZATION_CAP) -> float:
    """Peak ops/s at precision (A, W); one MAC counts as two operations."""
    return 2.0 * (dev.lut_budget * utilization_cap / table.f(a_bits, w_bits)) * clock_hz


def roofline(dev: DeviceModel, table: CostTable, precisions: Sequence[tuple[int, int]],
             clock_hz: float, utilization_cap: float = DEFAULT_UTILIZATION_CAP,
             ai_range: tuple[float, float] | None = None, samples: int = 49) -> list[RooflineCurve]:
    """One roofline per (A, W) precision, sampled at log-spaced intensities.

    The ridge point of every curve is inserted into its samples.
    """
    peaks = [compute_peak(dev, table, a, w, clock_hz, utilization_cap) for a, w in precisions]
    ridges = [p / dev.mem_bandwidth for p in peaks]
    if ai_range is None:
        ai_range = (min(ridges) / 100.0, max(ridges) * 100.0)
    grid = np.logspace(np.log10(ai_range[0]), np.log10(ai_range[1]), samples)
    curves = []
    for (a, w), peak, ridge in zip(precisions, peaks, ridges):
        ais = sorted(set(grid.tolist()) | {ridge})
        pts = tuple((ai, min(peak, ai * dev.mem_bandwidth)) for ai in ais)
        curves.append(RooflineCurve(f"{w}/{a}", a, w, peak, ridge, pts))
    return curves
