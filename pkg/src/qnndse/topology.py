"""Network topology description: layer shapes, precisions, file format.

A topology document is JSON with three top-level keys::

    {
      "name": "tiny",
      "input": {"height": 32, "width": 32, "channels": 3, "bits": 8},
      "layers": [
        {"type": "conv", "k": 3, "stride": 1, "pad": 1,
         "out_channels": 64, "a_bits": 8, "w_bits": 8},
        {"type": "maxpool", "k": 2, "stride": 2},
        {"type": "fc", "out_channels": 10, "a_bits": 2, "w_bits": 8}
      ]
    }

Fully-connected layers are canonicalized to a convolution whose kernel
covers the whole input map (k = n, stride 1, no padding).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from .errors import TopologyError

MAX_BITS = 8


class LayerKind(str, enum.Enum):
    CONV = "conv"
    FULLY_CONNECTED = "fully_connected"
    MAX_POOL = "max_pool"


_FILE_TYPES = {
    "conv": LayerKind.CONV,
    "fc": LayerKind.FULLY_CONNECTED,
    "maxpool": LayerKind.MAX_POOL,
}
_TYPE_NAMES = {v: k for k, v in _FILE_TYPES.items()}


@dataclass(frozen=True)
class LayerSpec:
    """Shape and precision of one layer.

    ``a_bits`` is the precision of the activations *entering* the layer and
    ``w_bits`` the weight precision (``None`` for pooling layers).
    """

    kind: LayerKind
    n: int
    c: int
    k: int
    s: int
    pad: int
    c_out: int
    a_bits: int
    w_bits: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        self.validate()

    def validate(self, index=None):
        def fail(msg):
            raise TopologyError(msg, layer=index)

        for name in ("n", "c", "k", "s", "c_out"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                fail(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.pad, int) or self.pad < 0:
            fail(f"pad must be a non-negative integer, got {self.pad!r}")
        if self.pad >= self.k:
            fail(f"pad {self.pad} must be smaller than kernel {self.k}")
        if self.n + 2 * self.pad < self.k:
            fail(f"kernel {self.k} larger than padded input {self.n + 2 * self.pad}")
        if (self.n + 2 * self.pad - self.k) % self.s:
            fail(
                "non-integral output dimension: "
                f"(n + 2*pad - k) = {self.n + 2 * self.pad - self.k} not divisible by stride {self.s}"
            )
        if not 1 <= self.a_bits <= MAX_BITS:
            fail(f"a_bits must be in 1..{MAX_BITS}, got {self.a_bits}")
        if self.kind is LayerKind.MAX_POOL:
            if self.c_out != self.c:
                fail("max_pool must preserve the channel count")
            if self.w_bits is not None:
                fail("max_pool has no weights; w_bits must be unset")
        else:
            if self.w_bits is None or not 1 <= self.w_bits <= MAX_BITS:
                fail(f"w_bits must be in 1..{MAX_BITS}, got {self.w_bits}")
        if self.kind is LayerKind.FULLY_CONNECTED and (
            self.k != self.n or self.s != 1 or self.pad != 0
        ):
            fail("fully_connected layers must have k == n, stride 1, pad 0")

    @property
    def has_weights(self) -> bool:
        return self.kind is not LayerKind.MAX_POOL

    @property
    def n_pad(self) -> int:
        return self.n + 2 * self.pad

    @property
    def n_out(self) -> int:
        return (self.n_pad - self.k) // self.s + 1

    def output_dim(self) -> tuple[int, int]:
        return output_dim(self)

    def mac_count(self) -> int:
        return mac_count(self)

    @property
    def weight_count(self) -> int:
        if not self.has_weights:
            return 0
        return self.k * self.k * self.c * self.c_out


def output_dim(layer: LayerSpec) -> tuple[int, int]:
    """Return ``(n_out, c_out)`` for a validated layer."""
    return (layer.n + 2 * layer.pad - layer.k) // layer.s + 1, layer.c_out


def mac_count(layer: LayerSpec) -> int:
    """Multiply-accumulates per image: n_out^2 * K^2 * C * C'."""
    if not layer.has_weights:
        raise TopologyError("layer has no MACs")
    n_out, _ = output_dim(layer)
    return n_out * n_out * layer.k * layer.k * layer.c * layer.c_out


def conv(n, c, k, c_out, a_bits, w_bits, s=1, pad=0) -> LayerSpec:
    return LayerSpec(LayerKind.CONV, n, c, k, s, pad, c_out, a_bits, w_bits)


def fully_connected(n, c, c_out, a_bits, w_bits) -> LayerSpec:
    return LayerSpec(LayerKind.FULLY_CONNECTED, n, c, n, 1, 0, c_out, a_bits, w_bits)


def max_pool(n, c, k, a_bits, s=None, pad=0) -> LayerSpec:
    return LayerSpec(LayerKind.MAX_POOL, n, c, k, k if s is None else s, pad, c, a_bits)


@dataclass(frozen=True)
class InputSpec:
    height: int
    width: int
    channels: int
    bits: int


@dataclass(frozen=True)
class NetworkTopology:
    name: str
    input: InputSpec
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_topology(self)

    @property
    def compute_layers(self) -> list[LayerSpec]:
        """Layers carrying weights (conv and fully-connected), in order."""
        return [l for l in self.layers if l.has_weights]

    @property
    def compute_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.has_weights]

    def out_bits(self, index: int) -> int:
        """Precision of the activations produced by layer ``index``."""
        if index + 1 < len(self.layers):
            return self.layers[index + 1].a_bits
        return self.layers[index].a_bits

    def total_macs(self) -> int:
        return sum(mac_count(l) for l in self.compute_layers)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input": {
                "height": self.input.height,
                "width": self.input.width,
                "channels": self.input.channels,
                "bits": self.input.bits,
            },
            "layers": [_layer_to_dict(l) for l in self.layers],
        }


def validate_topology(topo: NetworkTopology) -> None:
    if not topo.layers:
        raise TopologyError("topology has no layers")
    inp = topo.input
    if inp.height != inp.width:
        raise TopologyError(f"feature maps must be square, got {inp.height}x{inp.width}")
    if not 1 <= inp.bits <= MAX_BITS:
        raise TopologyError(f"input bits must be in 1..{MAX_BITS}, got {inp.bits}")
    n, c, bits = inp.width, inp.channels, inp.bits
    for i, layer in enumerate(topo.layers):
        layer.validate(i)
        if (layer.n, layer.c) != (n, c):
            raise TopologyError(
                f"chained-shape mismatch: expected input ({n}, {c}), got ({layer.n}, {layer.c})",
                layer=i,
            )
        if layer.a_bits != bits:
            raise TopologyError(
                f"activation precision mismatch: previous stage produces {bits} bits, "
                f"layer expects a_bits={layer.a_bits}",
                layer=i,
            )
        n, c = output_dim(layer)
        # pooling forwards codes unchanged; weighted layers requantize to
        # whatever the next layer consumes
        if layer.has_weights:
            bits = topo.out_bits(i)
    if not topo.compute_layers:
        raise TopologyError("topology has no conv or fully-connected layers")


def _layer_to_dict(layer: LayerSpec) -> dict[str, Any]:
    d: dict[str, Any] = {"type": _TYPE_NAMES[layer.kind]}
    if layer.kind is LayerKind.CONV:
        d.update(k=layer.k, stride=layer.s, pad=layer.pad, out_channels=layer.c_out,
                 a_bits=layer.a_bits, w_bits=layer.w_bits)
    elif layer.kind is LayerKind.FULLY_CONNECTED:
        d.update(out_channels=layer.c_out, a_bits=layer.a_bits, w_bits=layer.w_bits)
    else:
        d.update(k=layer.k, stride=layer.s, pad=layer.pad, a_bits=layer.a_bits)
    return d


_LAYER_FIELDS = {
    "conv": ({"type", "k", "stride", "out_channels", "a_bits", "w_bits"}, {"pad"}),
    "fc": ({"type", "out_channels", "a_bits", "w_bits"}, set()),
    "maxpool": ({"type", "k", "stride"}, {"pad", "a_bits"}),
}


def _check_keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise TopologyError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - required - optional
    if unknown:
        raise TopologyError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise TopologyError(f"{where}: missing field(s) {sorted(missing)}")


def _int(obj, key, where):
    value = obj[key]
    if not isinstance(value, int) or isinstance(value, bool):
        raise TopologyError(f"{where}.{key}: expected integer, got {value!r}")
    return value


def _pool_bits(entries, index, default):
    # an unannotated pool carries whatever precision the next layer consumes
    for entry in entries[index + 1:]:
        if isinstance(entry, dict) and isinstance(entry.get("a_bits"), int):
            return entry["a_bits"]
    return default


def topology_from_dict(doc: dict[str, Any]) -> NetworkTopology:
    _check_keys(doc, {"name", "input", "layers"}, set(), "document")
    inp = doc["input"]
    _check_keys(inp, {"height", "width", "channels", "bits"}, set(), "input")
    input_spec = InputSpec(*(_int(inp, k, "input") for k in ("height", "width", "channels", "bits")))
    raw_layers = doc["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        raise TopologyError("layers: expected a non-empty array")

    n, c, bits = input_spec.width, input_spec.channels, input_spec.bits
    layers: list[LayerSpec] = []
    for i, entry in enumerate(raw_layers):
        where = f"layers[{i}]"
        if not isinstance(entry, dict) or entry.get("type") not in _FILE_TYPES:
            raise TopologyError(f"{where}.type must be one of {sorted(_FILE_TYPES)}", layer=i)
        required, optional = _LAYER_FIELDS[entry["type"]]
        _check_keys(entry, required, optional, where)
        kind = _FILE_TYPES[entry["type"]]
        if kind is LayerKind.MAX_POOL:
            a = _int(entry, "a_bits", where) if "a_bits" in entry else _pool_bits(raw_layers, i, bits)
            layer = LayerSpec(kind, n, c, _int(entry, "k", where), _int(entry, "stride", where),
                              _int(entry, "pad", where) if "pad" in entry else 0, c, a)
        elif kind is LayerKind.FULLY_CONNECTED:
            layer = LayerSpec(kind, n, c, n, 1, 0, _int(entry, "out_channels", where),
                              _int(entry, "a_bits", where), _int(entry, "w_bits", where))
        else:
            layer = LayerSpec(kind, n, c, _int(entry, "k", where), _int(entry, "stride", where),
                              _int(entry, "pad", where) if "pad" in entry else 0,
                              _int(entry, "out_channels", where),
                              _int(entry, "a_bits", where), _int(entry, "w_bits", where))
        layers.append(layer)
        n, c = output_dim(layer)
        bits = layer.a_bits
    name = doc["name"]
    if not isinstance(name, str):
        raise TopologyError("name: expected a string")
    return NetworkTopology(name, input_spec, tuple(layers))


def parse_topology(text: str) -> NetworkTopology:
    """Parse and validate a topology document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"syntax error: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    return topology_from_dict(doc)


def serialize_topology(topo: NetworkTopology) -> str:
    return json.dumps(topo.to_dict(), indent=2) + "\n"


def load_topology(path) -> NetworkTopology:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read())


def rebuild(name: str, input_spec: InputSpec, layers: Iterable[LayerSpec]) -> NetworkTopology:
    """Re-chain ``layers`` from ``input_spec``, recomputing each layer's n/c.

    Only kind, k, s, pad, c_out and precisions are taken from the given
    layers; fully-connected kernels are re-sized to the new input width.
    """
    n, c = input_spec.width, input_spec.channels
    out = []
    for layer in layers:
        if layer.kind is LayerKind.FULLY_CONNECTED:
            new = replace(layer, n=n, c=c, k=n)
        elif layer.kind is LayerKind.MAX_POOL:
            new = replace(layer, n=n, c=c, c_out=c)
        else:
            new = replace(layer, n=n, c=c)
        out.append(new)
        n, c = output_dim(new)
    return NetworkTopology(name, input_spec, tuple(out))


def with_precision(topo: NetworkTopology, a_bits: int, w_bits: int,
                   edge_w_bits: int | None = 8) -> NetworkTopology:
    """Requantize a topology to w/a precision.

    The first compute layer keeps the input precision for its activations;
    first and last compute layers use ``edge_w_bits`` weights when given.
    Pooling layers take the precision of the stream passing through them.
    """
    compute = topo.compute_indices
    first, last = compute[0], compute[-1]
    layers = list(topo.layers)
    for i, layer in enumerate(layers):
        a = topo.input.bits if i <= first else a_bits
        if layer.has_weights:
            w = edge_w_bits if (edge_w_bits is not None and i in (first, last)) else w_bits
            layers[i] = replace(layer, a_bits=a, w_bits=w)
        else:
            layers[i] = replace(layer, a_bits=a)
    return NetworkTopology(topo.name, topo.input, tuple(layers))


def single_layer(layer: LayerSpec, name: str = "single") -> NetworkTopology:
    """Wrap one weighted layer as a topology."""
    return NetworkTopology(name, InputSpec(layer.n, layer.n, layer.c, layer.a_bits), (layer,))


def chain(name: str, layers: Sequence[LayerSpec], input_bits: int | None = None) -> NetworkTopology:
    first = layers[0]
    bits = first.a_bits if input_bits is None else input_bits
    return NetworkTopology(name, InputSpec(first.n, first.n, first.c, bits), tuple(layers))
