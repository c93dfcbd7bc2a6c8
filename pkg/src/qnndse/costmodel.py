"""Analytic BRAM / LUT resource model of the streaming architecture.

Per convolution-like layer:

* sliding-window line buffer::

      BRAM_swu = M * (ceil(K/S) + 1) * ceil(S*N_pad / depth) * ceil(C*A / width)

* weight memory, split across PE memories of depth WM = K^2*C*C'/(SIMD*PE)::

      BRAM_weights = PE * ceil(WM*width / depth) * ceil(SIMD*W / width)   (faithful)
      BRAM_weights = PE * ceil(WM / depth)       * ceil(SIMD*W / width)   (corrected)

* compute::

      LUTs = ceil(M * PE * SIMD * f(A, W))

Pooling layers cost nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

from .errors import CostTableError, FoldingError
from .topology import LayerSpec, NetworkTopology

EQ2_MODES = ("faithful", "corrected")


@dataclass(frozen=True)
class LayerFold:
    pe: int = 1
    simd: int = 1


@dataclass(frozen=True)
class FoldingConfig:
    """Global multi-vector count plus PE/SIMD per conv-like layer."""

    m: int
    per_layer: tuple[LayerFold, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "per_layer",
            tuple(f if isinstance(f, LayerFold) else LayerFold(*f) for f in self.per_layer),
        )
        if not isinstance(self.m, int) or self.m < 1:
            raise FoldingError(f"m must be >= 1, got {self.m!r}")
        for i, f in enumerate(self.per_layer):
            if f.pe < 1 or f.simd < 1:
                raise FoldingError(f"layer {i}: pe and simd must be >= 1, got {f}")

    @classmethod
    def minimal(cls, topo: NetworkTopology) -> "FoldingConfig":
        return cls(1, tuple(LayerFold() for _ in topo.compute_layers))

    def with_layer(self, index: int, fold: LayerFold) -> "FoldingConfig":
        layers = list(self.per_layer)
        layers[index] = fold
        return FoldingConfig(self.m, tuple(layers))

    def with_m(self, m: int) -> "FoldingConfig":
        return FoldingConfig(m, self.per_layer)

    def to_dict(self) -> dict[str, Any]:
        return {"m": self.m, "layers": [{"pe": f.pe, "simd": f.simd} for f in self.per_layer]}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "FoldingConfig":
        unknown = set(doc) - {"m", "layers"}
        if unknown:
            raise FoldingError(f"folding: unknown field(s) {sorted(unknown)}")
        try:
            layers = []
            for i, entry in enumerate(doc["layers"]):
                extra = set(entry) - {"pe", "simd"}
                if extra:
                    raise FoldingError(f"folding layers[{i}]: unknown field(s) {sorted(extra)}")
                layers.append(LayerFold(int(entry["pe"]), int(entry["simd"])))
            return cls(int(doc["m"]), tuple(layers))
        except (KeyError, TypeError) as exc:
            raise FoldingError(f"folding: malformed document ({exc})") from None


def check_fold(layer: LayerSpec, fold: LayerFold, index=None) -> None:
    """Raise unless SIMD | C, PE | C' (which makes WM integral)."""
    where = f"layer {index}: " if index is not None else ""
    if layer.c % fold.simd:
        raise FoldingError(f"{where}simd={fold.simd} does not divide C={layer.c}")
    if layer.c_out % fold.pe:
        raise FoldingError(f"{where}pe={fold.pe} does not divide C'={layer.c_out}")
    if layer.weight_count % (fold.simd * fold.pe):
        raise FoldingError(f"{where}folding does not tile weight matrix")


def check_folding(topo: NetworkTopology, fold: FoldingConfig) -> None:
    layers = topo.compute_layers
    if len(fold.per_layer) != len(layers):
        raise FoldingError(
            f"folding has {len(fold.per_layer)} entries, topology has {len(layers)} conv-like layers"
        )
    for i, (layer, f) in enumerate(zip(layers, fold.per_layer)):
        check_fold(layer, f, i)


@dataclass(frozen=True)
class DeviceModel:
    name: str
    lut_budget: int
    bram_budget: int
    bram_depth: int = 512
    bram_width: int = 36
    dsp_budget: int = 1
    mem_bandwidth: float = 1.0  # bytes per second

    def __post_init__(self):
        for key in ("lut_budget", "bram_budget", "bram_depth", "bram_width", "dsp_budget", "mem_bandwidth"):
            if not getattr(self, key) > 0:
                raise ValueError(f"device {key} must be > 0, got {getattr(self, key)!r}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["mem_bandwidth_gbps"] = d.pop("mem_bandwidth") / 1e9
        return d

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "DeviceModel":
        known = {"name", "lut_budget", "bram_budget", "bram_depth", "bram_width", "dsp_budget",
                 "mem_bandwidth_gbps"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"device: unknown field(s) {sorted(unknown)}")
        missing = {"name", "lut_budget", "bram_budget"} - set(doc)
        if missing:
            raise ValueError(f"device: missing field(s) {sorted(missing)}")
        kwargs = {k: doc[k] for k in known - {"mem_bandwidth_gbps"} if k in doc}
        if "mem_bandwidth_gbps" in doc:
            kwargs["mem_bandwidth"] = float(doc["mem_bandwidth_gbps"]) * 1e9
        return cls(**kwargs)


@dataclass(frozen=True)
class CostTable:
    """Empirical LUT cost per MAC, ``f(A, W)``.

    Without an entry the placeholder rule ``A * max(W, 2)`` applies (bipolar
    weights still take two bits); it is not a measured table.
    """

    entries: Mapping[tuple[int, int], float] = field(default_factory=dict)
    use_default_rule: bool = True

    def __post_init__(self):
        for key, value in self.entries.items():
            if not value > 0:
                raise CostTableError(f"luts_per_mac must be > 0 for (a, w) = {key}")

    @staticmethod
    def default_rule(a_bits: int, w_bits: int) -> int:
        return a_bits * max(w_bits, 2)

    def f(self, a_bits: int, w_bits: int) -> float:
        key = (a_bits, w_bits)
        if key in self.entries:
            return self.entries[key]
        if self.use_default_rule:
            return self.default_rule(a_bits, w_bits)
        raise CostTableError(f"no cost-table entry for (a={a_bits}, w={w_bits}) and default rule disabled")

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": [{"a": a, "w": w, "luts_per_mac": v} for (a, w), v in sorted(self.entries.items())],
            "use_default_rule": self.use_default_rule,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CostTable":
        unknown = set(doc) - {"entries", "use_default_rule"}
        if unknown:
            raise CostTableError(f"cost table: unknown field(s) {sorted(unknown)}")
        entries = {}
        for e in doc.get("entries", []):
            entries[(int(e["a"]), int(e["w"]))] = float(e["luts_per_mac"])
        return cls(entries, bool(doc.get("use_default_rule", True)))


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


def bram_swu(layer: LayerSpec, fold: LayerFold | None, m: int, dev: DeviceModel) -> int:
    """Line-buffer BRAM blocks of the sliding window unit."""
    if not layer.has_weights:
        return 0
    return (
        m
        * (_cdiv(layer.k, layer.s) + 1)
        * _cdiv(layer.s * layer.n_pad, dev.bram_depth)
        * _cdiv(layer.c * layer.a_bits, dev.bram_width)
    )


def wm_depth(layer: LayerSpec, fold: LayerFold) -> int:
    total = layer.weight_count
    if total % (fold.simd * fold.pe):
        raise FoldingError("folding does not tile weight matrix")
    return total // (fold.simd * fold.pe)


def bram_weights(layer: LayerSpec, fold: LayerFold, dev: DeviceModel,
                 mode: str = "faithful") -> tuple[int, int]:
    """Weight-memory BRAM blocks and the per-PE memory depth WM."""
    if not layer.has_weights:
        return 0, 0
    check_fold(layer, fold)
    wm = wm_depth(layer, fold)
    if mode == "faithful":
        depth_blocks = _cdiv(wm * dev.bram_width, dev.bram_depth)
    elif mode == "corrected":
        depth_blocks = _cdiv(wm, dev.bram_depth)
    else:
        raise ValueError(f"unknown weight-memory mode {mode!r}")
    return fold.pe * depth_blocks * _cdiv(fold.simd * layer.w_bits, dev.bram_width), wm


def lut_cost(layer: LayerSpec, fold: LayerFold, m: int, table: CostTable) -> int:
    if not layer.has_weights:
        return 0
    f = Fraction(str(table.f(layer.a_bits, layer.w_bits)))
    return math.ceil(m * fold.pe * fold.simd * f)


@dataclass(frozen=True)
class LayerResources:
    layer: int  # index into topology.layers
    bram_swu: int
    bram_weights: int
    wm_depth: int
    luts: int

    @property
    def bram(self) -> int:
        return self.bram_swu + self.bram_weights


@dataclass(frozen=True)
class ResourceEstimate:
    per_layer: tuple[LayerResources, ...]
    bram_total: int
    lut_total: int
    bram_fraction: float
    lut_fraction: float

    def violations(self, cap: float = 1.0) -> list[str]:
        """Names of resources whose utilization exceeds ``cap``."""
        out = []
        if self.bram_fraction > cap:
            out.append("bram")
        if self.lut_fraction > cap:
            out.append("lut")
        return out

    def feasible(self, cap: float = 1.0) -> bool:
        return not self.violations(cap)

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_layer": [asdict(r) for r in self.per_layer],
            "bram_total": self.bram_total,
            "lut_total": self.lut_total,
            "bram_fraction": self.bram_fraction,
            "lut_fraction": self.lut_fraction,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ResourceEstimate":
        return cls(
            tuple(LayerResources(**r) for r in doc["per_layer"]),
            doc["bram_total"], doc["lut_total"], doc["bram_fraction"], doc["lut_fraction"],
        )


def layer_resources(layer: LayerSpec, index: int, fold: LayerFold, m: int,
                    dev: DeviceModel, table: CostTable, mode: str = "faithful") -> LayerResources:
    bw, wm = bram_weights(layer, fold, dev, mode)
    return LayerResources(index, bram_swu(layer, fold, m, dev), bw, wm, lut_cost(layer, fold, m, table))


def summarize(per_layer: Sequence[LayerResources], dev: DeviceModel) -> ResourceEstimate:
    bram = sum(r.bram for r in per_layer)
    luts = sum(r.luts for r in per_layer)
    return ResourceEstimate(tuple(per_layer), bram, luts, bram / dev.bram_budget, luts / dev.lut_budget)


def estimate_network(topo: NetworkTopology, fold: FoldingConfig, dev: DeviceModel,
                     table: CostTable, mode: str = "faithful") -> ResourceEstimate:
    """Per-layer BRAM/LUT figures, totals and utilization against ``dev``."""
    check_folding(topo, fold)
    per_layer = [
        layer_resources(topo.layers[i], i, f, fold.m, dev, table, mode)
        for i, f in zip(topo.compute_indices, fold.per_layer)
    ]
    return summarize(per_layer, dev)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_device(path) -> DeviceModel:
    return DeviceModel.from_dict(_load_json(path))


def load_cost_table(path) -> CostTable:
    return CostTable.from_dict(_load_json(path))


def load_folding(path) -> FoldingConfig:
    return FoldingConfig.from_dict(_load_json(path))


def save_folding(fold: FoldingConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fold.to_dict(), fh, indent=2)
        fh.write("\n")
