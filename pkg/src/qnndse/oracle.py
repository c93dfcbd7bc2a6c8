"""Dense reference implementations used to check the streaming simulator.

Nothing here shares code with :mod:`qnndse.simulator`: weights are decoded
locally, the convolution walks kernel offsets over the zero-padded input
directly (no windows, no folding) and thresholds are compared explicitly.
"""

from __future__ import annotations

import numpy as np

from .qtensor import Encoding, QTensor
from .topology import LayerSpec, NetworkTopology


def _decode_weights(w: QTensor) -> np.ndarray:
    raw = w.codes()
    if w.encoding is Encoding.BIPOLAR:
        return np.where(raw == 1, 1, -1).astype(np.int64)
    if w.encoding is Encoding.TWOS_COMPLEMENT:
        return np.where(raw >= 1 << (w.bits - 1), raw - (1 << w.bits), raw).astype(np.int64)
    raise ValueError(f"unsupported weight encoding {w.encoding!r}")


def reference_accumulators(inputs: QTensor, layer: LayerSpec, weights: QTensor) -> np.ndarray:
    """Integer convolution ``(M, n_out, n_out, C')`` of level codes with weights."""
    x = inputs.codes().astype(np.int64)  # (M, N, N, C)
    w = _decode_weights(weights)  # (C', C, K, K)
    m = x.shape[0]
    p, s, k = layer.pad, layer.s, layer.k
    xp = np.zeros((m, layer.n + 2 * p, layer.n + 2 * p, layer.c), dtype=np.int64)
    xp[:, p:p + layer.n, p:p + layer.n, :] = x
    n_out = (layer.n + 2 * p - k) // s + 1
    acc = np.zeros((m, n_out, n_out, layer.c_out), dtype=np.int64)
    for ky in range(k):
        for kx in range(k):
            patch = xp[:, ky:ky + s * (n_out - 1) + 1:s, kx:kx + s * (n_out - 1) + 1:s, :]
            acc += np.tensordot(patch, w[:, :, ky, kx], axes=([3], [1]))
    return acc


def apply_thresholds(acc: np.ndarray, thresholds) -> np.ndarray:
    out = np.zeros(acc.shape, dtype=np.int64)
    for ch, tset in enumerate(thresholds):
        a = acc[..., ch]
        count = np.zeros(a.shape, dtype=np.int64)
        for t in tset.thresholds:
            count += (a >= t)
        if tset.cutoff is not None:
            count[a >= tset.cutoff] = 0
        out[..., ch] = count
    return out


def reference_conv_oracle(inputs: QTensor, layer: LayerSpec, weights: QTensor, thresholds,
                          out_bits: int | None = None) -> QTensor:
    acc = reference_accumulators(inputs, layer, weights)
    codes = apply_thresholds(acc, thresholds)
    if out_bits is None:
        out_bits = max(1, (len(thresholds[0].thresholds) + 1).bit_length() - 1)
    return QTensor.from_codes(codes, out_bits, Encoding.UNSIGNED_LEVEL_CODE)


def reference_pool(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    m = x.shape[0]
    p, s, k = layer.pad, layer.s, layer.k
    xp = np.zeros((m, layer.n + 2 * p, layer.n + 2 * p, layer.c), dtype=np.int64)
    xp[:, p:p + layer.n, p:p + layer.n, :] = x
    n_out = (layer.n + 2 * p - k) // s + 1
    out = np.zeros((m, n_out, n_out, layer.c), dtype=np.int64)
    for oy in range(n_out):
        for ox in range(n_out):
            out[:, oy, ox, :] = xp[:, oy * s:oy * s + k, ox * s:ox * s + k, :].max(axis=(1, 2))
    return out


def reference_network(topo: NetworkTopology, weights, thresholds, inputs: QTensor) -> QTensor:
    x = inputs
    pos = 0
    for i, layer in enumerate(topo.layers):
        bits = topo.out_bits(i)
        if layer.has_weights:
            x = reference_conv_oracle(x, layer, weights[pos], thresholds[pos], bits)
            pos += 1
        else:
            x = QTensor.from_codes(reference_pool(x.codes(), layer), bits, Encoding.UNSIGNED_LEVEL_CODE)
    return x
