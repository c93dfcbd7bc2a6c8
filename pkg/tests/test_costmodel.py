import math
from fractions import Fraction

import pytest
from hypothesis import assume, given, strategies as st

from qnndse.costmodel import (
    CostTable,
    DeviceModel,
    FoldingConfig,
    LayerFold,
    ResourceEstimate,
    bram_swu,
    bram_weights,
    estimate_network,
    load_cost_table,
    load_device,
    load_folding,
    lut_cost,
    save_folding,
)
from qnndse.errors import CostTableError, FoldingError
from qnndse.topology import chain, conv, load_topology, max_pool, single_layer

DEV = DeviceModel("d", lut_budget=100_000, bram_budget=1000)


def ceil(x):
    return math.ceil(Fraction(x))


def swu_oracle(m, k, s, n_pad, c, a, depth=512, width=36):
    return m * (ceil(Fraction(k, s)) + 1) * ceil(Fraction(s * n_pad, depth)) * ceil(Fraction(c * a, width))


def weights_oracle(pe, simd, k, c, c_out, w, faithful=True, depth=512, width=36):
    wm = Fraction(k * k * c * c_out, simd * pe)
    assert wm.denominator == 1
    d = ceil(wm * width / depth) if faithful else ceil(wm / depth)
    return pe * d * ceil(Fraction(simd * w, width)), int(wm)


# -- goldens ------------------------------------------------------------------


def test_bram_swu_examples():
    layer = conv(32, 64, 3, 64, 2, 1)
    assert bram_swu(layer, None, 1, DEV) == 16
    assert bram_swu(conv(1, 1, 1, 1, 1, 1), None, 1, DEV) == 2
    assert bram_swu(layer, None, 4, DEV) == 64


def test_bram_weights_examples():
    assert bram_weights(conv(8, 64, 3, 128, 2, 2), LayerFold(16, 32), DEV) == (352, 144)
    assert bram_weights(conv(1, 1, 1, 1, 2, 1), LayerFold(1, 1), DEV) == (1, 1)
    assert bram_weights(conv(8, 8, 3, 16, 2, 2), LayerFold(2, 8), DEV) == (12, 72)


def test_corrected_mode():
    count, wm = bram_weights(conv(8, 64, 3, 128, 2, 2), LayerFold(16, 32), DEV, "corrected")
    assert (count, wm) == (16 * 1 * 2, 144)
    with pytest.raises(ValueError):
        bram_weights(conv(8, 64, 3, 128, 2, 2), LayerFold(16, 32), DEV, "bogus")


def test_lut_examples():
    table = CostTable()
    assert lut_cost(conv(8, 8, 3, 8, 2, 1), LayerFold(4, 8), 1, table) == 128
    assert lut_cost(conv(8, 8, 3, 8, 1, 1), LayerFold(1, 1), 1, table) == 2


def test_lut_ceil_is_exact():
    table = CostTable({(2, 1): 0.1})
    # 3 * 0.1 is 0.30000000000000004 in floats; the ceiling must still be 1
    assert lut_cost(conv(8, 3, 3, 8, 2, 1), LayerFold(1, 3), 1, table) == 1
    assert lut_cost(conv(8, 10, 3, 8, 2, 1), LayerFold(1, 10), 1, table) == 1


def test_missing_table_entry():
    table = CostTable({}, use_default_rule=False)
    with pytest.raises(CostTableError):
        lut_cost(conv(8, 8, 3, 8, 2, 1), LayerFold(1, 1), 1, table)


def test_fold_must_tile():
    with pytest.raises(FoldingError, match="does not divide"):
        bram_weights(conv(8, 6, 3, 8, 2, 1), LayerFold(1, 4), DEV)
    with pytest.raises(FoldingError, match="does not divide"):
        bram_weights(conv(8, 6, 3, 8, 2, 1), LayerFold(3, 1), DEV)


def test_pool_costs_nothing():
    pool = max_pool(8, 4, 2, 2)
    assert bram_swu(pool, None, 3, DEV) == 0
    assert bram_weights(pool, LayerFold(), DEV) == (0, 0)
    assert lut_cost(pool, LayerFold(), 3, CostTable()) == 0


# -- networks -----------------------------------------------------------------


def test_single_layer_totals():
    topo = single_layer(conv(32, 64, 3, 64, 2, 1))
    est = estimate_network(topo, FoldingConfig.minimal(topo), DEV, CostTable())
    r = est.per_layer[0]
    assert r.bram_swu == 16
    assert est.bram_total == r.bram_swu + r.bram_weights
    assert est.lut_total == r.luts


def test_two_identical_layers_double():
    one = single_layer(conv(8, 4, 1, 4, 2, 1))
    two = chain("two", [conv(8, 4, 1, 4, 2, 1), conv(8, 4, 1, 4, 2, 1)])
    e1 = estimate_network(one, FoldingConfig.minimal(one), DEV, CostTable())
    e2 = estimate_network(two, FoldingConfig.minimal(two), DEV, CostTable())
    assert (e2.bram_total, e2.lut_total) == (2 * e1.bram_total, 2 * e1.lut_total)


def test_folding_length_checked():
    topo = single_layer(conv(8, 4, 1, 4, 2, 1))
    with pytest.raises(FoldingError):
        estimate_network(topo, FoldingConfig(1, (LayerFold(), LayerFold())), DEV, CostTable())


@pytest.mark.xfail(strict=True, reason="SIMD=1 weight memories waste 35 of 36 bits per word, so an "
                   "AlexNet-size network needs far more BRAM than a VU9P holds in either mode")
@pytest.mark.parametrize("mode", ["faithful", "corrected"])
def test_dorefa_minimal_fits_vu9p(samples, mode):
    topo = load_topology(samples("dorefa-like.topo"))
    est = estimate_network(topo, FoldingConfig.minimal(topo), load_device(samples("vu9p.device")),
                           CostTable(), mode)
    assert 0 < est.bram_fraction < 1 and 0 < est.lut_fraction < 1


def test_tiny_cnn_minimal_fits_vu9p(samples):
    topo = load_topology(samples("tiny-cnn.topo"))
    est = estimate_network(topo, FoldingConfig.minimal(topo), load_device(samples("vu9p.device")), CostTable())
    assert 0 < est.bram_fraction < 1 and 0 < est.lut_fraction < 1


def test_file_roundtrips(tmp_path, samples):
    dev = load_device(samples("vu9p.device"))
    assert dev.mem_bandwidth == pytest.approx(76.8e9)
    assert DeviceModel.from_dict(dev.to_dict()) == dev
    table = CostTable({(2, 1): 3.5})
    assert CostTable.from_dict(table.to_dict()) == table
    assert load_cost_table(samples("default.costtable")) == CostTable()
    fold = FoldingConfig(2, (LayerFold(4, 8), LayerFold(1, 2)))
    save_folding(fold, tmp_path / "f.json")
    assert load_folding(tmp_path / "f.json") == fold
    topo = single_layer(conv(8, 8, 3, 8, 2, 1))
    est = estimate_network(topo, FoldingConfig(1, (LayerFold(4, 8),)), DEV, CostTable())
    assert ResourceEstimate.from_dict(est.to_dict()) == est


def test_device_rejects_bad_budgets():
    with pytest.raises(ValueError):
        DeviceModel("x", lut_budget=0, bram_budget=1)
    with pytest.raises(ValueError, match="unknown"):
        DeviceModel.from_dict({"name": "x", "lut_budget": 1, "bram_budget": 1, "uram": 3})


# -- properties ---------------------------------------------------------------

small = st.integers(1, 6)


@given(m=small, k=st.integers(1, 5), s=st.integers(1, 3), n=st.integers(1, 700), c=st.integers(1, 80),
       a=st.integers(1, 8))
def test_bram_swu_matches_oracle_and_bounds(m, k, s, n, c, a):
    n = n + k
    assume((n - k) % s == 0)
    layer = conv(n, c, k, 1, a, 1, s=s)
    got = bram_swu(layer, None, m, DEV)
    assert got == swu_oracle(m, k, s, n, c, a)
    assert got >= m * (ceil(Fraction(k, s)) + 1)
    assert bram_swu(layer, None, 2 * m, DEV) == 2 * got


@given(m=small, k=st.integers(1, 5), n=st.integers(1, 600), c=st.integers(1, 64), a=st.integers(1, 7),
       which=st.sampled_from(["m", "k", "n", "c", "a"]))
def test_bram_swu_monotone(m, k, n, c, a, which):
    base = dict(m=m, k=k, n=n + k, c=c, a=a)
    bigger = dict(base, **{which: base[which] + 1})

    def ev(p):
        return bram_swu(conv(p["n"], p["c"], p["k"], 1, p["a"], 1), None, p["m"], DEV)

    assert ev(bigger) >= ev(base)


@given(pe=st.integers(1, 16), simd=st.integers(1, 64), x=st.integers(1, 40), y=st.integers(1, 40),
       k=st.sampled_from([1, 3]), w=st.integers(1, 8), mode=st.sampled_from(["faithful", "corrected"]))
def test_bram_weights_oracle_conservation_bounds(pe, simd, x, y, k, w, mode):
    layer = conv(k, simd * x, k, pe * y, 2, w)
    count, wm = bram_weights(layer, LayerFold(pe, simd), DEV, mode)
    assert (count, wm) == weights_oracle(pe, simd, k, simd * x, pe * y, w, mode == "faithful")
    assert pe * wm * simd == k * k * layer.c * layer.c_out
    assert count >= pe


@given(pe=st.integers(1, 16), simd=st.integers(1, 64), x=st.integers(1, 40), y=st.integers(1, 40),
       w=st.integers(1, 7), which=st.sampled_from(["pe", "simd", "x", "y", "w"]),
       mode=st.sampled_from(["faithful", "corrected"]))
def test_bram_weights_monotone_at_fixed_depth(pe, simd, x, y, w, which, mode):
    # channels are built as simd*x and pe*y so WM = x*y stays integral; bumping
    # pe or simd alone leaves WM unchanged
    base = dict(pe=pe, simd=simd, x=x, y=y, w=w)
    bigger = dict(base, **{which: base[which] + 1})

    def ev(p):
        layer = conv(1, p["simd"] * p["x"], 1, p["pe"] * p["y"], 2, p["w"])
        return bram_weights(layer, LayerFold(p["pe"], p["simd"]), DEV, mode)[0]

    assert ev(bigger) >= ev(base)


@given(m=small, pe=st.integers(1, 16), simd=st.integers(1, 16), a=st.integers(1, 7), w=st.integers(1, 7),
       which=st.sampled_from(["m", "pe", "simd", "a", "w"]))
def test_lut_monotone_and_linear(m, pe, simd, a, w, which):
    table = CostTable()
    base = dict(m=m, pe=pe, simd=simd, a=a, w=w)
    bigger = dict(base, **{which: base[which] + 1})

    def ev(p, scale=1):
        layer = conv(4, p["simd"], 1, p["pe"], p["a"], p["w"])
        return lut_cost(layer, LayerFold(p["pe"], p["simd"]), scale * p["m"], table)

    assert ev(bigger) >= ev(base)
    assert ev(base, 2) == 2 * ev(base)
    assert ev(base) == m * pe * simd * a * max(w, 2)
