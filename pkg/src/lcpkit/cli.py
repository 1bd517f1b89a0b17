"""Command-line front end: analyze, split, fatten, compare, simulate, accel, report.

Every invocation writes a manifest (command, input hashes, config snapshot,
seed, version) alongside its outputs so runs are reproducible.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Any

from . import __version__, accel, analytics, graph, presets, simulator, splitter
from .errors import InfeasibleError, ValidationError

STRATEGY_ALIASES = {
    "data": "data_parallel",
    "model": "model_parallel_output_split",
    "model-output": "model_parallel_output_split",
    "model-input": "model_parallel_input_split",
    "lcp": "lcp",
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    out_dir: Path, command: list[str], inputs: list[Path], config: dict[str, Any], seed: int | None
) -> None:
    manifest = {
        "command": command,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config": config,
        "tool_version": __version__,
        "seed": seed,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def _write_csv(path: Path, columns: list[str], rows: list[dict[str, Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _resolve_model_path(ref: str) -> Path:
    path = Path(ref)
    if path.exists():
        return path
    return presets.bundled_model_path(ref)


def _load_any_model(ref: str) -> graph.ModelGraph | splitter.SplitModel:
    path = _resolve_model_path(ref)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("kind") == "split_model":
        return splitter.parse_split_model(doc)
    return graph.parse_model(doc)


def _footprint_rows(report: graph.FootprintReport) -> list[dict[str, Any]]:
    return [
        {
            "layer": e.layer_id,
            "params": e.params,
            "macs": e.macs,
            "activation_bytes": e.activation_bytes,
        }
        for e in report.per_layer
    ]


def cmd_analyze(args: argparse.Namespace, out_dir: Path) -> int:
    path = _resolve_model_path(args.model)
    model = _load_any_model(args.model)
    if isinstance(model, splitter.SplitModel):
        model = model.to_graph()
    report = graph.total_footprint(model, args.element_bits)
    payload = {
        "model": model.name,
        "total_params": report.total_params,
        "total_macs": report.total_macs,
        "model_bytes": report.model_bytes,
        "per_layer": _footprint_rows(report),
    }
    if args.format == "csv":
        _write_csv(
            out_dir / "footprint.csv",
            ["layer", "params", "macs", "activation_bytes"],
            _footprint_rows(report),
        )
    else:
        _write_json(out_dir / "footprint.json", payload)
    _write_manifest(out_dir, sys.argv[1:], [path], {"element_bits": args.element_bits}, args.seed)
    print(
        f"{model.name}: {report.total_params:,} params, {report.total_macs:,} MACs, "
        f"{report.model_bytes:,} bytes"
    )
    return 0


def _split_config(args: argparse.Namespace) -> splitter.SplitConfig:
    device = presets.load_device(args.device) if args.device else None
    return splitter.SplitConfig(
        division_factor=args.factor,
        device=device,
        framework_mem_overhead=args.mem_overhead,
        latency_budget_s=args.latency_budget,
        stem_mode=args.stem,
    )


def cmd_split(args: argparse.Namespace, out_dir: Path) -> int:
    path = _resolve_model_path(args.model)
    model = graph.parse_model(path.read_text(encoding="utf-8"))
    if args.device:
        sm = splitter.split(model, _split_config(args))
    else:
        branches = args.branches if args.branches else args.factor**args.passes
        sm = splitter.split_to_branches(model, branches, args.factor, args.stem)
    if args.fatten:
        sm = splitter.fatten(sm, args.fatten)
    doc = splitter.serialize_split_model(sm)
    out_path = out_dir / f"{sm.provenance.key}.json"
    _write_json(out_path, doc)
    _write_manifest(
        out_dir,
        sys.argv[1:],
        [path],
        {"factor": args.factor, "device": args.device, "fatten": args.fatten, "stem": args.stem},
        args.seed,
    )
    branch_fp = splitter.branch_footprint(sm)
    total = graph.total_footprint(sm.to_graph())
    print(f"{sm.provenance.key}: {sm.split_count} branches, signature {sm.signature()}")
    print(
        f"per-branch: {branch_fp.total_params:,} params, {branch_fp.total_macs:,} MACs, "
        f"{branch_fp.model_bytes:,} bytes"
    )
    print(f"total: {total.total_params:,} params, {total.total_macs:,} MACs")
    print(f"wrote {out_path}")
    return 0


def cmd_fatten(args: argparse.Namespace, out_dir: Path) -> int:
    path = _resolve_model_path(args.model)
    sm = splitter.parse_split_model(path.read_text(encoding="utf-8"))
    fat = splitter.fatten(sm, args.percent)
    out_path = out_dir / f"{fat.provenance.key}.json"
    _write_json(out_path, splitter.serialize_split_model(fat))
    _write_manifest(out_dir, sys.argv[1:], [path], {"percent": args.percent}, args.seed)
    total = graph.total_footprint(fat.to_graph())
    print(f"{fat.provenance.key}: {total.total_params:,} params, {total.total_macs:,} MACs")
    print(f"wrote {out_path}")
    return 0


def cmd_compare(args: argparse.Namespace, out_dir: Path) -> int:
    path = _resolve_model_path(args.model)
    model = graph.parse_model(path.read_text(encoding="utf-8"))
    kinds = []
    for token in args.strategies.split(","):
        token = token.strip()
        if token not in STRATEGY_ALIASES:
            raise ValidationError(
                f"unknown strategy {token!r}; choose from {', '.join(STRATEGY_ALIASES)}"
            )
        kinds.append(STRATEGY_ALIASES[token])
    counts = [int(tok) for tok in args.devices_n.split(",")]
    strategies = [
        analytics.Strategy(kind, n) for kind in kinds for n in counts
    ]
    rows = analytics.compare_strategies(
        model, strategies, args.element_bits, stem_mode=args.stem
    )
    if args.format == "csv":
        _write_csv(out_dir / "compare.csv", list(analytics.COMPARE_COLUMNS), rows)
    else:
        _write_json(out_dir / "compare.json", rows)
    _write_manifest(
        out_dir,
        sys.argv[1:],
        [path],
        {"strategies": kinds, "devices_n": counts, "element_bits": args.element_bits},
        args.seed,
    )
    header = " ".join(f"{c:>12}" for c in analytics.COMPARE_COLUMNS)
    print(header)
    for row in rows:
        print(" ".join(f"{row[c]!s:>12}" for c in analytics.COMPARE_COLUMNS))
    return 0


def _device_from_entry(entry: Any) -> splitter.DeviceSpec:
    if isinstance(entry, str):
        return presets.load_device(entry)
    return splitter.DeviceSpec(**entry)


def _network_from_entry(entry: Any) -> simulator.NetworkSpec:
    if isinstance(entry, str):
        return presets.load_network(entry)
    entry = dict(entry)
    jitter = entry.pop("jitter", None)
    if jitter is not None:
        entry["jitter"] = simulator.Jitter(**jitter)
    return simulator.NetworkSpec(**entry)


def cmd_simulate(args: argparse.Namespace, out_dir: Path) -> int:
    scenario_path = Path(args.scenario)
    if not scenario_path.exists():
        raise ValidationError(f"scenario file not found: {scenario_path}")
    scenario = json.loads(scenario_path.read_text(encoding="utf-8"))
    for required in ("model", "strategy", "devices", "network", "n_inferences"):
        if required not in scenario:
            raise ValidationError(f"scenario missing field {required!r}")
    model_ref = scenario["model"]
    model_path = Path(model_ref)
    if not model_path.is_absolute() and not model_path.exists():
        candidate = scenario_path.parent / model_path
        model_ref = str(candidate) if candidate.exists() else model_ref
    model = _load_any_model(model_ref)
    strategy = analytics.Strategy(**scenario["strategy"])
    devices = [_device_from_entry(e) for e in scenario["devices"]]
    net = _network_from_entry(scenario["network"])
    seed = scenario.get("seed", args.seed if args.seed is not None else 0)
    calibrate = scenario.get("calibrate")
    if calibrate:
        reference = _load_any_model(calibrate["model"])
        if isinstance(reference, splitter.SplitModel):
            reference = reference.to_graph()
        devices = [
            simulator.calibrate_efficiency(d, reference, calibrate["target_latency_s"])
            for d in devices
        ]
    if "placement" in scenario:
        p = scenario["placement"]
        placement = simulator.Placement(
            assignment=dict(p["assignment"]), aggregator=p["aggregator"], source=p["source"]
        )
    else:
        placement = simulator.default_placement(model, strategy, devices)
    result = simulator.simulate(
        model, strategy, placement, devices, net, scenario["n_inferences"], seed
    )
    payload = dataclasses.asdict(result)
    payload.pop("event_trace")
    _write_json(out_dir / "simresult.json", payload)
    bucket = scenario.get("histogram_bucket_s", max(result.max_s / 20, 1e-9))
    hist = simulator.latency_histogram(result, bucket)
    _write_csv(
        out_dir / "histogram.csv",
        ["bucket_start_s", "count"],
        [{"bucket_start_s": b, "count": c} for b, c in hist],
    )
    _write_manifest(out_dir, sys.argv[1:], [scenario_path], scenario, seed)
    print(
        f"{getattr(model, 'name', model_ref)} {strategy.kind} n={strategy.n_devices}: "
        f"mean {result.mean_s * 1e3:.2f} ms, p50 {result.p50_s * 1e3:.2f} ms, "
        f"p95 {result.p95_s * 1e3:.2f} ms, max {result.max_s * 1e3:.2f} ms, "
        f"energy {result.energy_j_total:.3f} J/inf"
    )
    return 0


def cmd_accel(args: argparse.Namespace, out_dir: Path) -> int:
    path = _resolve_model_path(args.model)
    model = _load_any_model(args.model)
    if isinstance(model, splitter.SplitModel):
        model = model.branches[0] if args.branch_only else model.to_graph()
    overrides: dict[str, Any] = {}
    if args.clock:
        overrides["clock_hz"] = args.clock
    if args.bandwidth:
        overrides["mem_bandwidth_bytes_s"] = args.bandwidth
    cfg = presets.load_accel(args.preset, **overrides)
    if args.quant or args.prune:
        qp = accel.QuantPruneSpec(
            quant_bits=args.quant or model.element_bits,
            prune_fraction_per_conv=args.prune or 0.0,
        )
        model = accel.apply_quant_prune(model, qp)
    rows = accel.layer_report(model, cfg)
    latency = accel.model_latency(model, cfg)
    payload = {
        "model": model.name,
        "preset": args.preset,
        "element_bits": model.element_bits,
        "peak_throughput_ops_s": accel.peak_throughput(cfg),
        "latency_s": latency,
        "per_layer": rows,
    }
    if args.format == "csv":
        _write_csv(
            out_dir / "accel_report.csv",
            ["layer", "blocks", "macs", "compute_s", "memory_s", "latency_s", "bound"],
            rows,
        )
    else:
        _write_json(out_dir / "accel_report.json", payload)
    _write_manifest(
        out_dir,
        sys.argv[1:],
        [path],
        {"preset": args.preset, "quant": args.quant, "prune": args.prune},
        args.seed,
    )
    print(f"{model.name} on {args.preset}: {latency * 1e3:.3f} ms/inference")
    return 0


def cmd_report(args: argparse.Namespace, out_dir: Path) -> int:
    for ref in args.files:
        path = Path(ref)
        if not path.exists():
            raise ValidationError(f"report input not found: {path}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        print(f"== {path}")
        if "latencies_s" in payload:
            print(
                f"  simulation: n={len(payload['latencies_s'])} mean={payload['mean_s']:.6f}s "
                f"p95={payload['p95_s']:.6f}s energy={payload['energy_j_total']:.4f}J/inf"
            )
        elif "total_params" in payload:
            print(
                f"  footprint: {payload['total_params']:,} params, "
                f"{payload['total_macs']:,} MACs"
            )
        elif "latency_s" in payload:
            print(f"  accel: {payload['latency_s'] * 1e3:.3f} ms on {payload.get('preset')}")
        elif isinstance(payload, list) and payload and "strategy" in payload[0]:
            for row in payload:
                print(f"  {row}")
        else:
            print(f"  {json.dumps(payload)[:200]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS,
        help="seed recorded in the manifest and used by simulate",
    )
    common.add_argument(
        "--output-dir", default=argparse.SUPPRESS, help="directory for result files"
    )
    common.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="lcpkit",
        parents=[common],
        description="Split DNNs into low-communication branches and model their distributed execution.",
    )
    parser.set_defaults(seed=None, output_dir=".", format="json")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_parser(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help, parents=[common])

    p = add_parser("analyze", "parameter/MAC/memory footprint of a model")
    p.add_argument("model", help="model file or bundled model name")
    p.add_argument("--element-bits", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = add_parser("split", "split a model into branches")
    p.add_argument("model")
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--passes", type=int, default=1, help="division passes when no device given")
    p.add_argument("--branches", type=int, default=None, help="target branch count")
    p.add_argument("--device", default=None, help="device preset driving the fit loop")
    p.add_argument("--fatten", type=float, default=0.0, help="fatten fraction, e.g. 0.4")
    p.add_argument("--stem", choices=("replicated", "shared"), default="replicated")
    p.add_argument("--mem-overhead", type=int, default=0, help="framework memory overhead bytes")
    p.add_argument("--latency-budget", type=float, default=1.0)
    p.set_defaults(func=cmd_split)

    p = add_parser("fatten", "fatten a split model document")
    p.add_argument("model", help="split model file")
    p.add_argument("--percent", type=float, required=True, help="fraction, e.g. 0.4 for 40%%")
    p.set_defaults(func=cmd_fatten)

    p = add_parser("compare", "strategy comparison matrix")
    p.add_argument("model")
    p.add_argument("--strategies", default="data,model,lcp")
    p.add_argument("--devices-n", default="2,4,8")
    p.add_argument("--element-bits", type=int, default=None)
    p.add_argument("--stem", choices=("replicated", "shared"), default="replicated")
    p.set_defaults(func=cmd_compare)

    p = add_parser("simulate", "run a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_simulate)

    p = add_parser("accel", "systolic-array latency model")
    p.add_argument("model")
    p.add_argument("--preset", default="fpga-z7020")
    p.add_argument("--quant", type=int, default=None, help="quantized element bits")
    p.add_argument("--prune", type=float, default=None, help="structured prune fraction per conv")
    p.add_argument("--clock", type=float, default=None)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--branch-only", action="store_true", help="for split models, time one branch")
    p.set_defaults(func=cmd_accel)

    p = add_parser("report", "summarize result files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args, out_dir)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
