"""Command-line front end: ``qnndse <subcommand> ...``.

Exit codes: 0 success, 1 input error, 2 infeasible design or gap over
tolerance. Diagnostics go to standard error; reports go to standard output
or ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from typing import Any

import numpy as np

from . import __version__
from .costmodel import (
    CostTable,
    FoldingConfig,
    estimate_network,
    load_cost_table,
    load_device,
    load_folding,
    save_folding,
)
from .errors import DeviceUnsuitableError, QnnDseError
from .explorer import ExploreGoal, ParetoRecord, explore, pareto_front
from .files import load_accuracy, load_thresholds
from .perfmodel import DEFAULT_UTILIZATION_CAP, estimate_perf, roofline
from .qtensor import QTensor
from .simulator import random_input, random_parameters, simulate_network
from .topology import load_topology, with_precision

log = logging.getLogger("qnndse")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class InputError(Exception):
    """Bad flags or unreadable input files (exit code 1)."""


# -- shared helpers -------------------------------------------------------------


def _need(args, name):
    value = getattr(args, name, None)
    if value is None:
        raise InputError(f"--{name.replace('_', '-')} is required for '{args.command}'")
    return value


def _clock_hz(args) -> float:
    mhz = _need(args, "clock_mhz")
    if not mhz > 0:
        raise InputError("--clock-mhz must be > 0")
    return mhz * 1e6


def _cost_table(args) -> CostTable:
    return load_cost_table(args.cost_table) if args.cost_table else CostTable()


def _folding(args, topo) -> FoldingConfig:
    fold = load_folding(args.folding) if args.folding else FoldingConfig.minimal(topo)
    if getattr(args, "m", None) is not None:
        fold = fold.with_m(args.m)
    return fold


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def _emit(args, machine: dict[str, Any], text: str) -> None:
    body = json.dumps(machine, indent=2, sort_keys=True) + "\n" if args.format == "machine" else text
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body)
    else:
        sys.stdout.write(body)


def _table(header: list[str], rows: list[list[Any]]) -> str:
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def _resource_rows(topo, est, perf):
    rows = []
    for r, ii in zip(est.per_layer, perf.per_layer_ii):
        layer = topo.layers[r.layer]
        rows.append([r.layer, layer.kind.value, ii, r.bram_swu, r.bram_weights, r.wm_depth, r.luts])
    return rows


_RES_HEADER = ["layer", "kind", "II [cycles]", "SWU [BRAM]", "weights [BRAM]", "WM [words]", "LUTs"]


def _summary(est, perf, dev, cap) -> str:
    return (
        f"BRAM total: {est.bram_total} blocks of {dev.bram_budget} ({_pct(est.bram_fraction)}, cap {_pct(cap)})\n"
        f"LUT total:  {est.lut_total} LUTs of {dev.lut_budget} ({_pct(est.lut_fraction)}, cap {_pct(cap)})\n"
        f"throughput: {perf.fps:.2f} fps at {perf.clock_hz / 1e6:g} MHz, M = {perf.m}\n"
        f"latency:    {perf.latency * 1e3:.4f} ms (serial bound)\n"
    )


# -- subcommands -----------------------------------------------------------------


def cmd_estimate(args) -> int:
    topo = load_topology(_need(args, "topology"))
    dev = load_device(_need(args, "device"))
    clock = _clock_hz(args)
    fold = _folding(args, topo)
    est = estimate_network(topo, fold, dev, _cost_table(args), args.eq2_mode)
    perf = estimate_perf(topo, fold, clock)
    bad = est.violations(args.utilization_cap)
    machine = {"topology": topo.name, "device": dev.name, "folding": fold.to_dict(),
               "resources": est.to_dict(), "perf": perf.to_dict(),
               "utilization_cap": args.utilization_cap, "violations": bad, "feasible": not bad}
    text = f"topology {topo.name} on {dev.name} (weight-memory mode {args.eq2_mode})\n"
    text += _table(_RES_HEADER, _resource_rows(topo, est, perf)) + _summary(est, perf, dev, args.utilization_cap)
    text += "feasible: " + ("yes" if not bad else "no (" + ", ".join(bad) + " over cap)") + "\n"
    _emit(args, machine, text)
    if bad:
        for r in bad:
            frac = getattr(est, f"{r}_fraction")
            print(f"error: {r} utilization {_pct(frac)} exceeds cap {_pct(args.utilization_cap)}",
                  file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_explore(args) -> int:
    topo = load_topology(_need(args, "topology"))
    dev = load_device(_need(args, "device"))
    goal = ExploreGoal(args.utilization_cap, _clock_hz(args), args.target_fps, args.max_m)
    try:
        res = explore(topo, dev, _cost_table(args), goal, args.eq2_mode)
    except DeviceUnsuitableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.folding_out:
        save_folding(res.folding, args.folding_out)
    machine = {"topology": topo.name, "device": dev.name, **res.to_dict()}
    folds = [[i, f.pe, f.simd] for i, f in zip(topo.compute_indices, res.folding.per_layer)]
    text = f"explored {topo.name} on {dev.name}: {len(res.trace)} moves\n"
    text += f"folding (M = {res.folding.m}):\n" + _table(["layer", "PE", "SIMD"], folds)
    text += _table(_RES_HEADER, _resource_rows(topo, res.resources, res.perf))
    text += _summary(res.resources, res.perf, dev, args.utilization_cap)
    if args.target_fps is not None:
        text += f"target {args.target_fps:g} fps: {'reached' if res.reached_target else 'not reached'}\n"
    text += "trace:\n" + "".join(
        f"  {k + 1}. {m.describe()} (dII {m.delta_ii} cycles, dLUT {m.delta_lut} LUTs)\n"
        for k, m in enumerate(res.trace)
    )
    _emit(args, machine, text)
    return EXIT_OK


def _sim_inputs(args, topo, fold):
    rng = np.random.default_rng(args.seed)
    weights, thresholds = random_parameters(topo, rng)
    if args.weights:
        if len(args.weights) != len(weights):
            raise InputError(f"--weights needs {len(weights)} files, one per conv-like layer")
        weights = [QTensor.load(p) for p in args.weights]
    if args.thresholds:
        thresholds = load_thresholds(args.thresholds, topo, args.relu_mode)
    first = topo.layers[0]
    if args.input:
        inputs = QTensor.load(args.input)
    else:
        inputs = random_input(fold.m, first.n, first.c, first.a_bits, rng)
    return weights, thresholds, inputs


def _run_sim(args, topo, fold):
    weights, thresholds, inputs = _sim_inputs(args, topo, fold)
    return simulate_network(topo, fold, weights, thresholds, inputs, queue_capacity=args.queue_capacity)


def _cycle_rows(topo, res):
    return [[r.layer, topo.layers[r.layer].kind.value, r.ii, r.busy, r.stall, r.total, r.first_output,
             r.weight_fetches, r.peak_buffer_bits, r.buffer_bound_bits] for r in res.reports]


def cmd_simulate(args) -> int:
    topo = load_topology(_need(args, "topology"))
    fold = _folding(args, topo)
    res = _run_sim(args, topo, fold)
    if args.output:
        res.output.save(args.output)
    machine = res.to_dict()
    text = f"simulated {topo.name}, M = {fold.m}\n"
    text += _table(["layer", "kind", "II [cycles]", "busy [cycles]", "stall [cycles]", "total [cycles]",
                    "first out [cycle]", "weight fetches", "peak buffer [bits]", "buffer bound [bits]"],
                   _cycle_rows(topo, res))
    text += (f"cycles/batch: {res.cycles_per_batch} cycles\n"
             f"latency: {res.latency_cycles} cycles to first output\n"
             f"total: {res.total_cycles} cycles to drain\n")
    if args.output:
        text += f"output tensor: {args.output} dims {list(res.output.dims)}\n"
    _emit(args, machine, text)
    return EXIT_OK


def cmd_validate(args) -> int:
    topo = load_topology(_need(args, "topology"))
    fold = _folding(args, topo)
    clock = _clock_hz(args)
    perf = estimate_perf(topo, fold, clock)
    res = _run_sim(args, topo, fold)
    rows, layers = [], []
    for r in res.reports:
        sim = r.busy + r.stall
        gap = sim / r.ii - 1
        rows.append([r.layer, r.ii, r.busy, r.stall, sim, _pct(gap)])
        layers.append({"layer": r.layer, "analytic_ii": r.ii, "busy": r.busy, "stall": r.stall,
                       "simulated": sim, "gap": gap})
    analytic_fps = perf.fps
    sim_fps = fold.m * clock / res.cycles_per_batch
    gap = res.cycles_per_batch / perf.max_ii - 1
    ok = gap * 100 <= args.tolerance
    machine = {"topology": topo.name, "layers": layers, "analytic_max_ii": perf.max_ii,
               "simulated_cycles_per_batch": res.cycles_per_batch, "analytic_fps": analytic_fps,
               "simulated_fps": sim_fps, "gap": gap, "tolerance_pct": args.tolerance, "within_tolerance": ok}
    text = f"validate {topo.name}, M = {fold.m}, {clock / 1e6:g} MHz\n"
    text += _table(["layer", "analytic II [cycles]", "busy [cycles]", "stall [cycles]",
                    "simulated [cycles]", "gap"], rows)
    text += (f"cycles/batch: analytic {perf.max_ii}, simulated {res.cycles_per_batch} (gap {_pct(gap)})\n"
             f"throughput: analytic {analytic_fps:.2f} fps, simulated {sim_fps:.2f} fps\n"
             f"tolerance {args.tolerance:g}%: {'ok' if ok else 'EXCEEDED'}\n")
    _emit(args, machine, text)
    if not ok:
        print(f"error: gap {_pct(gap)} exceeds tolerance {args.tolerance:g}%", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _parse_precisions(spec: str) -> list[tuple[int, int]]:
    out = []
    for item in spec.split(","):
        try:
            w, a = (int(x) for x in item.strip().split("/"))
        except ValueError:
            raise InputError(f"--precisions: expected w/a pairs like 1/2, got {item!r}") from None
        if not (1 <= a <= 8 and 1 <= w <= 8):
            raise InputError(f"--precisions: bits must be in 1..8, got {item!r}")
        out.append((a, w))
    return out


def cmd_roofline(args) -> int:
    dev = load_device(_need(args, "device"))
    curves = roofline(dev, _cost_table(args), _parse_precisions(args.precisions), _clock_hz(args),
                      args.utilization_cap, samples=args.samples)
    machine = {"device": dev.name, "mem_bandwidth_bytes_per_s": dev.mem_bandwidth, "curves": [
        {"label": c.label, "a_bits": c.a_bits, "w_bits": c.w_bits, "compute_peak_ops": c.compute_peak,
         "ridge_ai": c.ridge_ai, "points": [list(p) for p in c.points]} for c in curves]}
    buf = io.StringIO()
    for c in curves:
        buf.write(f"# {c.label}: peak {c.compute_peak / 1e12:.3f} TOPS, ridge {c.ridge_ai:.2f} ops/byte\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["precision", "ai_ops_per_byte", "attainable_ops_per_s"])
    for c in curves:
        for ai, perf in c.points:
            writer.writerow([c.label, f"{ai:.6g}", f"{perf:.6g}"])
    _emit(args, machine, buf.getvalue())
    return EXIT_OK


def _explored_fps(args, rec):
    topo = with_precision(load_topology(_need(args, "topology")), rec.a_bits, rec.w_bits)
    dev = load_device(_need(args, "device"))
    goal = ExploreGoal(args.utilization_cap, _clock_hz(args), None, args.max_m)
    return explore(topo, dev, _cost_table(args), goal, args.eq2_mode)


def cmd_pareto(args) -> int:
    records = load_accuracy(_need(args, "accuracy"))
    if args.network:
        records = [r for r in records if r.network == args.network]
    points, skipped = [], []
    for rec in records:
        err = rec.error(args.error)
        if err is None:
            skipped.append(rec.label)
            continue
        if args.source == "table":
            if rec.kfps_est is None:
                skipped.append(rec.label)
                continue
            cost = rec.kfps_est * 1e3 if args.axis == "fps" else None
            if cost is None:
                raise InputError("--source table only provides the fps axis")
        else:
            if rec.a_bits > 8 or rec.w_bits > 8:
                skipped.append(rec.label)
                continue
            res = _explored_fps(args, rec)
            cost = res.perf.fps if args.axis == "fps" else res.resources.lut_total
        points.append(ParetoRecord(rec.label, err, cost))
    higher = args.axis == "fps"
    front = pareto_front(points, higher_is_better=higher)
    on_front = {p.label for p in front}
    unit = "fps" if args.axis == "fps" else "LUTs"
    machine = {"axis": args.axis, "unit": unit, "error": args.error, "higher_is_better": higher,
               "points": [{"label": p.label, "error_rate": p.error_rate, "hw_cost": p.hw_cost,
                           "pareto": p.label in on_front} for p in points],
               "front": [p.label for p in front], "skipped": skipped}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", f"{args.error}_err", f"cost_{unit}", "pareto"])
    for p in sorted(points, key=lambda p: p.hw_cost):
        writer.writerow([p.label, p.error_rate, f"{p.hw_cost:.6g}", int(p.label in on_front)])
    _emit(args, machine, buf.getvalue())
    if skipped:
        log.warning("skipped records without usable data: %s", ", ".join(skipped))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _cap(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"utilization cap must be in (0, 1], got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--topology", help="topology file (JSON)")
    common.add_argument("--device", help="device file (JSON)")
    common.add_argument("--cost-table", help="LUT cost table (JSON); default rule A*max(W,2) if omitted")
    common.add_argument("--folding", help="folding file (JSON); minimal folding if omitted")
    common.add_argument("--clock-mhz", type=float, help="clock frequency in MHz")
    common.add_argument("--utilization-cap", type=_cap, default=DEFAULT_UTILIZATION_CAP)
    common.add_argument("--eq2-mode", choices=["faithful", "corrected"], default="faithful",
                        help="weight-memory BRAM formula variant")
    common.add_argument("--relu-mode", choices=["standard", "paper-literal"], default="standard",
                        help="activation quantizer for thresholds given as scale/bias")
    common.add_argument("--format", choices=["text", "machine"], default="text")
    common.add_argument("--out", help="write the report here instead of standard output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qnndse", description="QNN accelerator design-space tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="resource and throughput estimate")
    p.add_argument("--m", type=_positive_int, help="override the multi-vector count M")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("explore", parents=[common], help="greedy folding search")
    p.add_argument("--max-m", type=_positive_int, default=8)
    p.add_argument("--target-fps", type=float)
    p.add_argument("--folding-out", help="write the chosen folding here")
    p.set_defaults(func=cmd_explore)

    for name, func, helptext in (("simulate", cmd_simulate, "cycle-level simulation"),
                                 ("validate", cmd_validate, "analytic vs simulated II")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--m", type=_positive_int, help="override the multi-vector count M")
        p.add_argument("--seed", type=int, default=0, help="seed for random weights/inputs")
        p.add_argument("--weights", nargs="+", help="QTNS weight files, one per conv-like layer")
        p.add_argument("--thresholds", help="thresholds file (JSON)")
        p.add_argument("--input", help="QTNS input batch; random if omitted")
        p.add_argument("--queue-capacity", type=_positive_int,
                       help="FIFO capacity in items; default one producer row")
        if name == "simulate":
            p.add_argument("--output", help="write the output tensor (QTNS) here")
        else:
            p.add_argument("--tolerance", type=float, default=15.0, help="allowed gap in percent")
        p.set_defaults(func=func)

    p = sub.add_parser("roofline", parents=[common], help="roofline curves per precision")
    p.add_argument("--precisions", default="1/1,1/2,2/2,4/4,8/8", help="comma-separated w/a pairs")
    p.add_argument("--samples", type=_positive_int, default=49)
    p.set_defaults(func=cmd_roofline)

    p = sub.add_parser("pareto", parents=[common], help="pareto front of error vs hardware cost")
    p.add_argument("--accuracy", help="accuracy data file (JSON)")
    p.add_argument("--error", choices=["top1", "top5"], default="top5")
    p.add_argument("--network", help="only use records of this network")
    p.add_argument("--axis", choices=["fps", "luts"], default="fps")
    p.add_argument("--source", choices=["table", "explore"], default="table",
                   help="cost from the file's kfps_est, or from exploring --topology per precision")
    p.add_argument("--max-m", type=_positive_int, default=8)
    p.set_defaults(func=cmd_pareto)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, QnnDseError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
