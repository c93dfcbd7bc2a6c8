"""Loaders for thresholds and accuracy data, and bundled sample files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import QnnDseError
from .quant import QuantSpec, ThresholdSet, build_thresholds
from .topology import NetworkTopology


def sample_path(name: str) -> Path:
    """Path of a file shipped in ``qnndse/samples``."""
    return Path(str(resources.files("qnndse") / "samples" / name))


def load_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise QnnDseError(f"{path}: syntax error at line {exc.lineno}: {exc.msg}") from None


# -- thresholds ----------------------------------------------------------------


def thresholds_from_doc(doc, topo: NetworkTopology, relu_mode: str = "standard"):
    """Per conv-like layer lists of :class:`ThresholdSet`.

    Entries are ``{layer, channel, thresholds[, cutoff]}`` or
    ``{layer, channel, scale, bias}``; ``layer`` indexes ``topo.layers``.
    """
    compute = topo.compute_indices
    table: dict[int, dict[int, ThresholdSet]] = {i: {} for i in compute}
    for k, e in enumerate(doc):
        where = f"thresholds[{k}]"
        unknown = set(e) - {"layer", "channel", "thresholds", "cutoff", "scale", "bias"}
        if unknown:
            raise QnnDseError(f"{where}: unknown field(s) {sorted(unknown)}")
        layer = e.get("layer")
        if layer not in table:
            raise QnnDseError(f"{where}: layer {layer!r} is not a conv-like layer")
        if "thresholds" in e:
            tset = ThresholdSet(tuple(e["thresholds"]), e.get("cutoff"))
        elif "scale" in e and "bias" in e:
            spec = QuantSpec(topo.out_bits(layer))
            tset = build_thresholds(spec, float(e["scale"]), float(e["bias"]), relu_mode=relu_mode)
        else:
            raise QnnDseError(f"{where}: needs 'thresholds' or 'scale' and 'bias'")
        table[layer][int(e["channel"])] = tset
    out = []
    for i in compute:
        c_out = topo.layers[i].c_out
        missing = [ch for ch in range(c_out) if ch not in table[i]]
        if missing:
            raise QnnDseError(f"layer {i}: no thresholds for channel(s) {missing[:5]}")
        out.append([table[i][ch] for ch in range(c_out)])
    return out


def load_thresholds(path, topo: NetworkTopology, relu_mode: str = "standard"):
    return thresholds_from_doc(load_json(path), topo, relu_mode)


def thresholds_to_doc(topo: NetworkTopology, thresholds) -> list[dict[str, Any]]:
    doc = []
    for i, sets in zip(topo.compute_indices, thresholds):
        for ch, t in enumerate(sets):
            entry = {"layer": i, "channel": ch, "thresholds": list(t.thresholds)}
            if t.cutoff is not None:
                entry["cutoff"] = t.cutoff
            doc.append(entry)
    return doc


# -- accuracy data -------------------------------------------------------------


@dataclass(frozen=True)
class AccuracyRecord:
    label: str
    top1_err: float | None
    top5_err: float | None
    a_bits: int
    w_bits: int
    network: str | None = None
    kfps_est: float | None = None
    kfps_measured: float | None = None

    def error(self, which: str) -> float | None:
        return self.top5_err if which == "top5" else self.top1_err


def load_accuracy(path) -> list[AccuracyRecord]:
    doc = load_json(path)
    if not isinstance(doc, list):
        raise QnnDseError(f"{path}: expected an array of records")
    out = []
    known = {"label", "top1_err", "top5_err", "precision", "network", "kfps_est", "kfps_measured"}
    for k, e in enumerate(doc):
        unknown = set(e) - known
        if unknown:
            raise QnnDseError(f"accuracy[{k}]: unknown field(s) {sorted(unknown)}")
        try:
            prec = e["precision"]
            rec = AccuracyRecord(e["label"], e.get("top1_err"), e.get("top5_err"),
                                 int(prec["a"]), int(prec["w"]), e.get("network"),
                                 e.get("kfps_est"), e.get("kfps_measured"))
        except (KeyError, TypeError) as exc:
            raise QnnDseError(f"accuracy[{k}]: malformed record ({exc})") from None
        for err in (rec.top1_err, rec.top5_err):
            if err is not None and not 0.0 <= err <= 1.0:
                raise QnnDseError(f"accuracy[{k}]: error rates are fractions in [0, 1]")
        out.append(rec)
    return out
