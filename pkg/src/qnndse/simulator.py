"""Cycle-level, bit-accurate simulation of the streaming dataflow pipeline.

Each weighted layer is one stage made of

* a sliding window unit holding a ring of ``ceil(K/S) + 1`` row stripes
  (``S`` padded rows each) and accepting one input pixel per cycle;
* a multi-vector matrix-vector-threshold unit doing one PE x SIMD weight
  block per cycle for all M lanes at once, then thresholding.

Pooling layers are functional only and take no cycles. Stages talk through
bounded FIFOs. All stages are evaluated downstream-first every cycle, so an
item pushed in cycle ``t`` is visible downstream in cycle ``t + 1``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .costmodel import FoldingConfig, LayerFold, check_fold, check_folding
from .errors import SimulationError
from .perfmodel import layer_ii
from .qtensor import Encoding, QTensor
from .quant import ThresholdSet, WeightEncoding, weight_ints
from .topology import LayerSpec, NetworkTopology, single_layer


@dataclass
class CycleReport:
    layer: int  # index into topology.layers
    busy: int = 0
    stall: int = 0
    total: int = 0  # cycles from start until the stage drained
    first_output: int | None = None  # cycles until the first output pixel left the stage
    first_busy: int | None = None
    weight_fetches: int = 0  # PE x SIMD weight blocks read
    peak_buffer_bits: int = 0
    buffer_bound_bits: int = 0
    ii: int = 0  # analytic initiation interval for reference

    @property
    def cycles_per_batch(self) -> int:
        return self.busy + self.stall

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "CycleReport":
        return cls(**doc)


@dataclass
class SimResult:
    output: QTensor
    reports: list[CycleReport]
    latency_cycles: int
    total_cycles: int

    @property
    def cycles_per_batch(self) -> int:
        return max(r.cycles_per_batch for r in self.reports)

    def to_dict(self) -> dict[str, Any]:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "latency_cycles": self.latency_cycles,
            "total_cycles": self.total_cycles,
            "cycles_per_batch": self.cycles_per_batch,
        }


class Fifo:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise SimulationError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.items: deque = deque()

    def can_push(self) -> bool:
        return len(self.items) < self.capacity

    def push(self, item) -> None:
        assert len(self.items) < self.capacity
        self.items.append(item)

    def __len__(self):
        return len(self.items)


def _needed_pixels(o: int, n_out: int, layer: LayerSpec) -> int:
    """Real input pixels (raster order) that must have arrived for window ``o``."""
    oy, ox = divmod(o, n_out)
    last_row = min(oy * layer.s + layer.k - 1 - layer.pad, layer.n - 1)
    last_col = min(ox * layer.s + layer.k - 1 - layer.pad, layer.n - 1)
    return max(last_row, 0) * layer.n + max(last_col, 0) + 1


class _Source:
    def __init__(self, images: np.ndarray, out: Fifo):
        m, n, _, c = images.shape
        # one item per pixel: (M, C) codes
        self.pixels = images.transpose(1, 2, 0, 3).reshape(n * n, m, c)
        self.out = out
        self.idx = 0

    def prefill(self):
        while self.idx < len(self.pixels) and self.out.can_push():
            self.out.push(self.pixels[self.idx])
            self.idx += 1

    def step(self, cycle) -> bool:
        if self.idx < len(self.pixels) and self.out.can_push():
            self.out.push(self.pixels[self.idx])
            self.idx += 1
            return True
        return False

    @property
    def done(self):
        return self.idx >= len(self.pixels)


class _ConvStage:
    def __init__(self, index: int, layer: LayerSpec, fold: LayerFold, m: int,
                 weights: np.ndarray, thresholds: Sequence[ThresholdSet], inp: Fifo, out: Fifo):
        self.layer = layer
        self.fold = fold
        self.m = m
        self.inp, self.out = inp, out
        self.n_out = layer.n_out
        self.windows = self.n_out * self.n_out
        self.stripes = -(-layer.k // layer.s) + 1
        self.ring_rows = self.stripes * layer.s
        self.ring = np.zeros((self.ring_rows, layer.n, m, layer.c), dtype=np.int64)
        self.received = 0
        self.next_window = 0
        self.steps_per_window = (layer.k * layer.k * layer.c // fold.simd) * (layer.c_out // fold.pe)
        nf, sf = layer.c_out // fold.pe, layer.k * layer.k * layer.c // fold.simd
        # (C', C, K, K) -> (C', K, K, C) -> folded tiles (NF, PE, SF, SIMD)
        wmat = weights.transpose(0, 2, 3, 1).reshape(layer.c_out, -1)
        self.tiles = wmat.reshape(nf, fold.pe, sf, fold.simd)
        self.thr = np.array([t.thresholds for t in thresholds], dtype=np.int64)
        self.cutoff = np.array(
            [t.cutoff if t.cutoff is not None else np.iinfo(np.int64).max for t in thresholds],
            dtype=np.int64,
        )
        self.remaining = 0
        self.result = None
        self.holding = None
        self.outputs_done = 0
        self.report = CycleReport(index, ii=layer_ii(layer, fold))
        self.report.buffer_bound_bits = (
            m * self.stripes * layer.s * layer.n_pad * layer.c * layer.a_bits
        )

    @property
    def done(self) -> bool:
        return self.outputs_done == self.windows

    @property
    def started(self) -> bool:
        return self.report.first_busy is not None

    # -- sliding window unit -------------------------------------------------

    def _oldest_stripe(self) -> int:
        return min(self.next_window // self.n_out, self.n_out)

    def _released_pixels(self) -> int:
        rows = self._oldest_stripe() * self.layer.s - self.layer.pad
        return min(max(rows, 0), self.layer.n) * self.layer.n

    def _accept(self) -> bool:
        if not self.inp.items or self.received >= self.layer.n * self.layer.n:
            return False
        row = self.received // self.layer.n
        stripe = (row + self.layer.pad) // self.layer.s
        if stripe >= self._oldest_stripe() + self.stripes:
            return False
        col = self.received % self.layer.n
        self.ring[(row + self.layer.pad) % self.ring_rows, col] = self.inp.items.popleft()
        self.received += 1
        resident = self.received - self._released_pixels()
        bits = resident * self.m * self.layer.c * self.layer.a_bits
        self.report.peak_buffer_bits = max(self.report.peak_buffer_bits, bits)
        return True

    def _window_ready(self) -> bool:
        return (self.next_window < self.windows
                and self.received >= _needed_pixels(self.next_window, self.n_out, self.layer))

    def _take_window(self) -> np.ndarray:
        layer = self.layer
        oy, ox = divmod(self.next_window, self.n_out)
        win = np.zeros((layer.k, layer.k, self.m, layer.c), dtype=np.int64)
        for ky in range(layer.k):
            rp = oy * layer.s + ky
            r = rp - layer.pad
            if not 0 <= r < layer.n:
                continue
            assert rp // layer.s >= self._oldest_stripe(), "row already released"
            c0 = ox * layer.s - layer.pad
            lo, hi = max(c0, 0), min(c0 + layer.k, layer.n)
            if lo < hi:
                win[ky, lo - c0:hi - c0] = self.ring[rp % self.ring_rows, lo:hi]
        self.next_window += 1
        # lanes x (ky, kx, c)
        return win.transpose(2, 0, 1, 3).reshape(self.m, -1)

    # -- matrix-vector-threshold unit -----------------------------------------

    def _compute(self, vec: np.ndarray) -> np.ndarray:
        sf = self.tiles.shape[2]
        x = vec.reshape(self.m, sf, self.fold.simd)
        # per weight block partial sums, accumulated over the synapse folds
        partial = np.einsum("npsk,msk->mnps", self.tiles, x)
        acc = partial.sum(axis=3).reshape(self.m, self.layer.c_out)
        codes = (acc[:, :, None] >= self.thr[None, :, :]).sum(axis=2)
        return np.where(acc >= self.cutoff[None, :], 0, codes)

    def _emit(self, cycle) -> bool:
        if not self.out.can_push():
            return False
        self.out.push(self.holding)
        self.holding = None
        self.outputs_done += 1
        if self.report.first_output is None:
            self.report.first_output = cycle + 1
        if self.done:
            self.report.total = cycle + 1
        return True

    def step(self, cycle) -> bool:
        event = False
        busy = False
        if self.holding is not None:
            event = self._emit(cycle)
        if self.holding is None and self.result is None and self._window_ready():
            self.result = self._compute(self._take_window())
            self.remaining = self.steps_per_window
            event = True
        if self.holding is None and self.result is not None:
            busy = True
            self.remaining -= 1
            self.report.busy += 1
            self.report.weight_fetches += 1
            if self.report.first_busy is None:
                self.report.first_busy = cycle
            if self.remaining == 0:
                self.holding, self.result = self.result, None
                self._emit(cycle)
                event = True
        if not busy and self.started and not self.done:
            self.report.stall += 1
        if self._accept():
            event = True
        return event

    def counting(self) -> bool:
        return self.holding is None and self.result is not None

    def skip(self, cycles: int) -> None:
        if self.counting():
            self.remaining -= cycles
            self.report.busy += cycles
            self.report.weight_fetches += cycles
        elif self.started and not self.done:
            self.report.stall += cycles


class _PoolStage:
    """Max pooling with zero cycle cost."""

    def __init__(self, index: int, layer: LayerSpec, m: int, inp: Fifo, out: Fifo):
        self.layer = layer
        self.inp, self.out = inp, out
        self.buf = np.zeros((layer.n, layer.n, m, layer.c), dtype=np.int64)
        self.received = 0
        self.n_out = layer.n_out
        self.next_out = 0
        self.report = CycleReport(index)

    @property
    def done(self) -> bool:
        return self.next_out == self.n_out * self.n_out

    def step(self, cycle) -> bool:
        event = False
        n = self.layer.n
        while self.inp.items:
            r, c = divmod(self.received, n)
            self.buf[r, c] = self.inp.items.popleft()
            self.received += 1
            event = True
        while (not self.done and self.out.can_push()
               and self.received >= _needed_pixels(self.next_out, self.n_out, self.layer)):
            oy, ox = divmod(self.next_out, self.n_out)
            r0, c0 = oy * self.layer.s - self.layer.pad, ox * self.layer.s - self.layer.pad
            block = self.buf[max(r0, 0):min(r0 + self.layer.k, n), max(c0, 0):min(c0 + self.layer.k, n)]
            # padding contributes code 0, the smallest code, so it never wins
            self.out.push(block.max(axis=(0, 1)))
            self.next_out += 1
            if self.report.first_output is None:
                self.report.first_output = cycle + 1
            if self.done:
                self.report.total = cycle + 1
            event = True
        return event

    def counting(self) -> bool:
        return False

    def skip(self, cycles: int) -> None:
        pass


def _weights_array(layer: LayerSpec, w: QTensor, index) -> np.ndarray:
    expected = (layer.c_out, layer.c, layer.k, layer.k)
    if w.dims != expected:
        raise SimulationError(f"layer {index}: weight dims {w.dims}, expected {expected}")
    want = Encoding.BIPOLAR if layer.w_bits == 1 else Encoding.TWOS_COMPLEMENT
    if w.encoding is not want or w.bits != layer.w_bits:
        raise SimulationError(
            f"layer {index}: weights are {w.encoding.name}/{w.bits}b, expected {want.name}/{layer.w_bits}b"
        )
    return weight_ints(w.codes(), WeightEncoding(layer.w_bits))


def _check_thresholds(layer: LayerSpec, thresholds, out_bits: int, index) -> None:
    if len(thresholds) != layer.c_out:
        raise SimulationError(f"layer {index}: {len(thresholds)} threshold sets, expected {layer.c_out}")
    want = (1 << out_bits) - 1
    for ch, t in enumerate(thresholds):
        if len(t.thresholds) != want:
            raise SimulationError(
                f"layer {index} channel {ch}: {len(t.thresholds)} thresholds, expected {want}"
            )


def simulate_network(topo: NetworkTopology, fold: FoldingConfig, weights: Sequence[QTensor],
                     thresholds: Sequence[Sequence[ThresholdSet]], inputs: QTensor,
                     queue_capacity: int | Sequence[int] | None = None,
                     prefill: bool = False, max_cycles: int | None = None,
                     final_bits: int | None = None) -> SimResult:
    """Run one batch of M images through the pipeline.

    ``queue_capacity`` sizes the FIFO in front of each layer (scalar or one
    per topology layer); by default each holds one row of its producer's
    output. With ``prefill`` the first FIFO starts holding the whole input.
    ``final_bits`` overrides the output precision of the last layer.
    """
    check_folding(topo, fold)
    compute = topo.compute_indices
    if len(weights) != len(compute) or len(thresholds) != len(compute):
        raise SimulationError(f"need weights and thresholds for {len(compute)} conv-like layers")
    m = fold.m
    first = topo.layers[0]
    if inputs.dims != (m, first.n, first.n, first.c):
        raise SimulationError(f"input dims {inputs.dims}, expected {(m, first.n, first.n, first.c)}")
    if inputs.encoding is not Encoding.UNSIGNED_LEVEL_CODE or inputs.bits != first.a_bits:
        raise SimulationError(f"input must be {first.a_bits}-bit unsigned level codes")

    n_layers = len(topo.layers)

    def out_bits(i):
        return final_bits if (final_bits is not None and i == n_layers - 1) else topo.out_bits(i)

    if queue_capacity is None or isinstance(queue_capacity, int):
        caps = []
        for i in range(n_layers):
            default = topo.input.width if i == 0 else topo.layers[i - 1].n_out
            caps.append(default if queue_capacity is None else queue_capacity)
    else:
        caps = list(queue_capacity)
        if len(caps) != n_layers:
            raise SimulationError(f"need {n_layers} queue capacities, got {len(caps)}")
    if prefill:
        caps[0] = max(caps[0], first.n * first.n)

    fifos = [Fifo(c) for c in caps]
    sink = Fifo(1 << 62)
    stages = []
    pos = 0
    for i, layer in enumerate(topo.layers):
        out = fifos[i + 1] if i + 1 < n_layers else sink
        if layer.has_weights:
            w = _weights_array(layer, weights[pos], i)
            _check_thresholds(layer, thresholds[pos], out_bits(i), i)
            stages.append(_ConvStage(i, layer, fold.per_layer[pos], m, w, thresholds[pos], fifos[i], out))
            pos += 1
        else:
            stages.append(_PoolStage(i, layer, m, fifos[i], out))
    source = _Source(inputs.codes(), fifos[0])
    if prefill:
        source.prefill()

    last = topo.layers[-1]
    n_out = last.n_out
    total_out = n_out * n_out
    latency = None
    cycle = 0
    collected = []
    budget = max_cycles if max_cycles is not None else 10 * sum(
        layer_ii(l, f) for l, f in zip(topo.compute_layers, fold.per_layer)
    ) + 10 * sum(l.n * l.n for l in topo.layers) + 1000
    while len(collected) < total_out:
        event = False
        for st in reversed(stages):
            event |= st.step(cycle)
        event |= source.step(cycle)
        while sink.items:
            collected.append(sink.items.popleft())
            if latency is None:
                latency = cycle + 1
        cycle += 1
        if len(collected) >= total_out:
            break
        if not event:
            counting = [st.remaining for st in stages if st.counting()]
            if not counting:
                raise SimulationError(f"pipeline deadlocked at cycle {cycle}")
            jump = min(counting) - 1
            if jump > 0:
                for st in stages:
                    st.skip(jump)
                cycle += jump
        if cycle > budget:
            raise SimulationError(f"simulation exceeded {budget} cycles")

    out_codes = np.stack(collected).reshape(n_out, n_out, m, last.c_out).transpose(2, 0, 1, 3)
    output = QTensor.from_codes(out_codes, out_bits(n_layers - 1), Encoding.UNSIGNED_LEVEL_CODE)
    reports = [st.report for st in stages if isinstance(st, _ConvStage)]
    return SimResult(output, reports, latency, cycle)


def simulate_layer(inputs: QTensor, layer: LayerSpec, fold: LayerFold, weights: QTensor,
                   thresholds: Sequence[ThresholdSet], queue_capacity: int | None = None,
                   prefill: bool = True) -> tuple[QTensor, CycleReport]:
    """Simulate a single weighted layer on a batch of ``inputs.dims[0]`` images.

    Output precision follows the number of thresholds per channel.
    """
    if not layer.has_weights:
        raise SimulationError("simulate_layer needs a conv or fully-connected layer")
    check_fold(layer, fold)
    if not thresholds:
        raise SimulationError("no thresholds given")
    out_bits = ThresholdSet(thresholds[0].thresholds).out_bits
    m = inputs.dims[0]
    res = simulate_network(single_layer(layer), FoldingConfig(m, (fold,)), [weights], [thresholds],
                           inputs, queue_capacity=queue_capacity, prefill=prefill,
                           final_bits=out_bits)
    return res.output, res.reports[0]


# -- random workloads --------------------------------------------------------


def random_weights(layer: LayerSpec, rng: np.random.Generator) -> QTensor:
    enc = Encoding.BIPOLAR if layer.w_bits == 1 else Encoding.TWOS_COMPLEMENT
    codes = rng.integers(0, 1 << layer.w_bits, size=(layer.c_out, layer.c, layer.k, layer.k))
    return QTensor.from_codes(codes, layer.w_bits, enc)


def random_thresholds(layer: LayerSpec, out_bits: int, rng: np.random.Generator) -> list[ThresholdSet]:
    """Sorted thresholds spread over the typical accumulator magnitude."""
    fan_in = layer.k * layer.k * layer.c
    max_a = (1 << layer.a_bits) - 1
    max_w = 1 if layer.w_bits == 1 else 1 << (layer.w_bits - 1)
    spread = max(1.0, np.sqrt(fan_in) * max_a * max_w / 2)
    out = []
    for _ in range(layer.c_out):
        t = np.sort(np.round(rng.normal(0.0, spread, size=(1 << out_bits) - 1))).astype(int)
        out.append(ThresholdSet(tuple(int(x) for x in t)))
    return out


def random_input(m: int, n: int, c: int, bits: int, rng: np.random.Generator) -> QTensor:
    codes = rng.integers(0, 1 << bits, size=(m, n, n, c))
    return QTensor.from_codes(codes, bits, Encoding.UNSIGNED_LEVEL_CODE)


def random_parameters(topo: NetworkTopology, rng: np.random.Generator):
    """Random weights and thresholds for every weighted layer of ``topo``."""
    weights, thresholds = [], []
    for i in topo.compute_indices:
        layer = topo.layers[i]
        weights.append(random_weights(layer, rng))
        thresholds.append(random_thresholds(layer, topo.out_bits(i), rng))
    return weights, thresholds
