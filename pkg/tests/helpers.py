"""Oracles and generators shared by the unit and acceptance tests."""

import math

import numpy as np

from qnndse.costmodel import CostTable, DeviceModel, FoldingConfig, LayerFold, estimate_network
from qnndse.explorer import ExploreGoal, dominates
from qnndse.perfmodel import estimate_perf
from qnndse.topology import chain, conv, max_pool


def brute_pareto(records, higher_is_better=True):
    """O(n^2) dominance filter."""
    return [p for p in records if not any(dominates(q, p, higher_is_better) for q in records)]


def pareto_key(records):
    return sorted((r.label, r.error_rate, r.hw_cost) for r in records)


def divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def random_topology(rng: np.random.Generator, max_layers=4):
    n = int(rng.choice([4, 6, 8, 12, 16]))
    c = int(rng.choice([1, 2, 3, 4, 8]))
    bits = int(rng.integers(1, 9))
    layers = []
    for _ in range(int(rng.integers(1, max_layers + 1))):
        if n >= 4 and n % 2 == 0 and layers and rng.random() < 0.25:
            layers.append(max_pool(n, c, 2, layers[-1].a_bits if not layers[-1].has_weights else bits))
            n //= 2
            continue
        k = int(rng.choice([1, 3]))
        c_out = int(rng.choice([2, 4, 6, 8, 12, 16, 32]))
        w = int(rng.integers(1, 9))
        layers.append(conv(n, c, k, c_out, bits, w, pad=k // 2))
        c = c_out
        bits = int(rng.integers(1, 9))
    if not any(l.has_weights for l in layers):
        layers.append(conv(n, c, 1, 4, layers[-1].a_bits, 2))
    return chain("random", _fix_pool_bits(layers))


def _fix_pool_bits(layers):
    # a pool forwards the precision it receives; make the following layer agree
    from dataclasses import replace
    out = []
    for layer in layers:
        if out and not out[-1].has_weights and layer.a_bits != out[-1].a_bits:
            layer = replace(layer, a_bits=out[-1].a_bits)
        out.append(layer)
    return out


def random_device(rng, topo, table, cap, mode="faithful"):
    """A device on which the minimal folding fits with random headroom."""
    est = estimate_network(topo, FoldingConfig.minimal(topo), DeviceModel("probe", 1, 1), table, mode)
    lut = math.ceil(est.lut_total / cap * rng.uniform(1.0, 60.0))
    bram = math.ceil(est.bram_total / cap * rng.uniform(1.0, 6.0))
    return DeviceModel("random", lut_budget=max(lut, 1), bram_budget=max(bram, 1))


def next_step(n, cur):
    bigger = [d for d in divisors(n) if d > cur]
    return bigger[0] if bigger else None


def improving_moves(topo, fold, dev, table, goal: ExploreGoal, mode="faithful"):
    """Every single move (any layer, PE or SIMD step, or M+1) that keeps the
    design within the cap and raises fps."""
    base = estimate_perf(topo, fold, goal.clock_hz).fps
    trials = []
    for i, (layer, f) in enumerate(zip(topo.compute_layers, fold.per_layer)):
        pe, simd = next_step(layer.c_out, f.pe), next_step(layer.c, f.simd)
        if pe:
            trials.append(fold.with_layer(i, LayerFold(pe, f.simd)))
        if simd:
            trials.append(fold.with_layer(i, LayerFold(f.pe, simd)))
    if fold.m < goal.max_m:
        trials.append(fold.with_m(fold.m + 1))
    out = []
    for t in trials:
        if not estimate_network(topo, t, dev, table, mode).feasible(goal.utilization_cap):
            continue
        if estimate_perf(topo, t, goal.clock_hz).fps > base:
            out.append(t)
    return out


def folding_valid(topo, fold):
    return all(l.c % f.simd == 0 and l.c_out % f.pe == 0 and
               (l.k * l.k * l.c * l.c_out) % (f.simd * f.pe) == 0
               for l, f in zip(topo.compute_layers, fold.per_layer)) and fold.m >= 1


def lut_bound_topology(chans, a_bits, w_bits, name="lut-bound"):
    """Five-layer 32x32 fixture whose cost is dominated by LUTs."""
    c0, c1, c2, c3, c4 = chans
    layers = [conv(32, c0, 3, c1, a_bits, w_bits, pad=1), conv(32, c1, 3, c2, a_bits, w_bits, pad=1),
              max_pool(32, c2, 2, a_bits), conv(16, c2, 3, c3, a_bits, w_bits, pad=1),
              conv(16, c3, 3, c4, a_bits, w_bits, pad=1)]
    return chain(name, layers, input_bits=a_bits)


BASE_CHANNELS = (16, 96, 96, 192, 192)
HALF_CHANNELS = (16, 48, 96, 96, 192)  # halving alternate boundaries halves every layer's MACs
LUT_BOUND_DEVICE = DeviceModel("lut-bound", lut_budget=20_000, bram_budget=200_000, mem_bandwidth=12.8e9)
DEFAULT_TABLE = CostTable()
