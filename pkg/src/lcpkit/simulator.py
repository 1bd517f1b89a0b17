"""Seeded discrete-event simulation of distributed inference.

Compute time of a work unit is macs * 2 / (peak_gops * efficiency); a message
costs base latency + jitter + (payload + overhead) / bandwidth. Transmissions
serialize on the sender's link (shared-medium behaviour of a local wireless
network); propagation overlaps. Inferences run back to back without
pipelining, so each one is simulated from t = 0 with fresh jitter draws.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Any

from . import graph as G
from . import splitter as S
from .analytics import Strategy, _share, _sliced_layer_counts
from .errors import InfeasibleError, ValidationError

JITTER_KINDS = ("none", "lognormal", "exponential_tail")


@dataclass(frozen=True)
class Jitter:
    kind: str = "none"
    median_s: float = 0.0
    sigma: float = 0.0
    mean_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in JITTER_KINDS:
            raise ValidationError(f"unknown jitter kind {self.kind!r}")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "lognormal":
            return rng.lognormvariate(math.log(self.median_s), self.sigma)
        return rng.expovariate(1.0 / self.mean_s)


@dataclass(frozen=True)
class NetworkSpec:
    bandwidth_bps: float
    base_latency_s: float = 0.0
    jitter: Jitter = field(default_factory=Jitter)
    per_message_overhead_bytes: int = 0
    name: str = "network"

    def __post_init__(self) -> None:
        if self.bandwidth_bps <= 0:
            raise ValidationError("bandwidth must be positive")
        if self.base_latency_s < 0:
            raise ValidationError("base latency must be >= 0")

    def tx_time_s(self, payload_bytes: int) -> float:
        return (payload_bytes + self.per_message_overhead_bytes) * 8.0 / self.bandwidth_bps


@dataclass
class Placement:
    """Work-unit to device assignment; source is a dedicated zero-compute node."""

    assignment: dict[str, int]
    aggregator: int
    source: int


@dataclass(frozen=True)
class SimResult:
    latencies_s: tuple[float, ...]
    mean_s: float
    p50_s: float
    p95_s: float
    max_s: float
    energy_j_per_inference: tuple[float, ...]
    energy_j_total: float
    seed: int
    device_busy_s: tuple[float, ...]
    makespan_s: float
    event_trace: tuple[tuple[float, float, int, str], ...] | None = None


def _quantile(sorted_values: list[float], q: float) -> float:
    idx = max(0, math.ceil(q * len(sorted_values)) - 1)
    return sorted_values[idx]


def default_placement(
    m: G.ModelGraph | S.SplitModel, s: Strategy, devices: list[S.DeviceSpec]
) -> Placement:
    """Round-robin work units onto devices; aggregator 0, dedicated source."""
    n = len(devices)
    if n < 1:
        raise ValidationError("at least one device required")
    if s.kind == "lcp":
        if not isinstance(m, S.SplitModel):
            raise ValidationError("lcp strategy requires a split model")
        b = m.split_count
        if n < b:
            raise InfeasibleError(f"lcp needs at least {b} devices, got {n}")
        assignment = {f"branch:{i}": i % n for i in range(b)}
        assignment["classifier"] = 0
    elif s.kind == "data_parallel":
        assignment = {f"replica:{i}": i for i in range(n)}
    else:
        assignment = {f"slice:{i}": i for i in range(n)}
    return Placement(assignment=assignment, aggregator=0, source=n)


def _work_units(m: G.ModelGraph | S.SplitModel, s: Strategy) -> list[str]:
    if s.kind == "lcp":
        assert isinstance(m, S.SplitModel)
        return [f"branch:{i}" for i in range(m.split_count)] + ["classifier"]
    if s.kind == "data_parallel":
        return [f"replica:{i}" for i in range(s.n_devices)]
    return [f"slice:{i}" for i in range(s.n_devices)]


class _Run:
    """Mutable accounting for one simulation run."""

    def __init__(self, n_devices: int, trace: bool):
        self.busy = [0.0] * n_devices
        self.trace: list[tuple[float, float, int, str]] | None = [] if trace else None

    def compute(self, device: int, start: float, duration: float, label: str) -> float:
        self.busy[device] += duration
        if self.trace is not None:
            self.trace.append((start, start + duration, device, label))
        return start + duration


def simulate(
    m: G.ModelGraph | S.SplitModel,
    s: Strategy,
    placement: Placement,
    devices: list[S.DeviceSpec],
    net: NetworkSpec,
    n_inferences: int,
    seed: int,
    trace: bool = False,
) -> SimResult:
    """Run n_inferences through the strategy's communication/compute schedule."""
    if n_inferences < 1:
        raise ValidationError("n_inferences must be >= 1")
    if not devices:
        raise ValidationError("zero-device network")
    for unit in _work_units(m, s):
        if unit not in placement.assignment:
            raise ValidationError(f"unplaced work unit {unit!r}")
        if not 0 <= placement.assignment[unit] < len(devices):
            raise ValidationError(f"work unit {unit!r} assigned to unknown device")

    rng = random.Random(seed)
    run = _Run(len(devices), trace)
    if s.kind == "lcp":
        latencies = _simulate_lcp(m, placement, devices, net, n_inferences, rng, run)
    elif s.kind == "data_parallel":
        latencies = _simulate_dp(m, placement, devices, net, n_inferences, rng, run)
    else:
        latencies = _simulate_mp(m, s, placement, devices, net, n_inferences, rng, run)

    ordered = sorted(latencies)
    makespan = sum(latencies)
    energy = _energy_from_accounting(run.busy, makespan, devices, n_inferences)
    return SimResult(
        latencies_s=tuple(latencies),
        mean_s=sum(latencies) / len(latencies),
        p50_s=_quantile(ordered, 0.50),
        p95_s=_quantile(ordered, 0.95),
        max_s=ordered[-1],
        energy_j_per_inference=energy,
        energy_j_total=sum(energy),
        seed=seed,
        device_busy_s=tuple(run.busy),
        makespan_s=makespan,
        event_trace=tuple(run.trace) if run.trace is not None else None,
    )


def _msg(net: NetworkSpec, rng: random.Random) -> float:
    return net.base_latency_s + net.jitter.sample(rng)


def _simulate_lcp(
    sm: S.SplitModel,
    placement: Placement,
    devices: list[S.DeviceSpec],
    net: NetworkSpec,
    n_inferences: int,
    rng: random.Random,
    run: _Run,
) -> list[float]:
    if not isinstance(sm, S.SplitModel):
        raise ValidationError("lcp strategy requires a split model")
    b = sm.split_count
    agg = placement.aggregator
    branch_macs = [G.total_footprint(br).total_macs for br in sm.branches]
    branch_in_bytes = math.prod(sm.branches[0].input_shape) * sm.element_bits // 8
    shapes = [G.infer_shapes(br) for br in sm.branches]
    prefinal_bytes = [
        shapes[i][sm.branches[i].sink.id].elements * sm.element_bits // 8 for i in range(b)
    ]
    from .analytics import _classifier_graph

    cls_macs = G.total_footprint(_classifier_graph(sm)).total_macs
    stem_macs = 0
    in_bytes = math.prod(sm.input_shape) * sm.element_bits // 8
    if sm.shared_head:
        full = G.total_footprint(sm.to_graph())
        stem_ids = {l.id for l in sm.shared_head}
        stem_macs = sum(e.macs for e in full.per_layer if e.layer_id in stem_ids)

    latencies = []
    for _ in range(n_inferences):
        if sm.shared_head:
            # stem executes once on the aggregator, which then broadcasts
            stem_in = net.tx_time_s(in_bytes) + _msg(net, rng)
            bcast_start = run.compute(
                agg, stem_in, devices[agg].compute_time_s(stem_macs), "stem"
            )
        else:
            bcast_start = 0.0
        tx_done = bcast_start
        arrival = [0.0] * b
        for i in range(b):
            dev = placement.assignment[f"branch:{i}"]
            if sm.shared_head and dev == agg:
                arrival[i] = bcast_start  # stem output already resident
                continue
            tx_done += net.tx_time_s(branch_in_bytes)
            arrival[i] = tx_done + _msg(net, rng)
        ends = [0.0] * b
        dev_free = [0.0] * len(devices)
        for i in range(b):
            dev = placement.assignment[f"branch:{i}"]
            start = max(arrival[i], dev_free[dev])
            ends[i] = run.compute(dev, start, devices[dev].compute_time_s(branch_macs[i]), f"branch:{i}")
            dev_free[dev] = ends[i]
        cls_ready = 0.0
        for i in range(b):
            dev = placement.assignment[f"branch:{i}"]
            if dev == agg:
                cls_ready = max(cls_ready, ends[i])
            else:
                cls_ready = max(
                    cls_ready, ends[i] + net.tx_time_s(prefinal_bytes[i]) + _msg(net, rng)
                )
        start = max(cls_ready, dev_free[agg])
        finish = run.compute(agg, start, devices[agg].compute_time_s(cls_macs), "classifier")
        latencies.append(finish)
    return latencies


def _simulate_dp(
    m: G.ModelGraph,
    placement: Placement,
    devices: list[S.DeviceSpec],
    net: NetworkSpec,
    n_inferences: int,
    rng: random.Random,
    run: _Run,
) -> list[float]:
    if isinstance(m, S.SplitModel):
        m = m.to_graph()
    fp = G.total_footprint(m)
    shapes = G.infer_shapes(m)
    in_bytes = math.prod(m.input_shape) * m.element_bits // 8
    out_bytes = shapes[m.sink.id].elements * m.element_bits // 8
    replicas = sorted(u for u in placement.assignment if u.startswith("replica:"))
    latencies = []
    for j in range(n_inferences):
        dev = placement.assignment[replicas[j % len(replicas)]]
        t_in = net.tx_time_s(in_bytes) + _msg(net, rng)
        done = run.compute(dev, t_in, devices[dev].compute_time_s(fp.total_macs), "replica")
        latencies.append(done + net.tx_time_s(out_bytes) + _msg(net, rng))
    return latencies


def _simulate_mp(
    m: G.ModelGraph,
    s: Strategy,
    placement: Placement,
    devices: list[S.DeviceSpec],
    net: NetworkSpec,
    n_inferences: int,
    rng: random.Random,
    run: _Run,
) -> list[float]:
    if isinstance(m, S.SplitModel):
        m = m.to_graph()
    n = s.n_devices
    if n != len({placement.assignment[f"slice:{i}"] for i in range(n)}):
        raise ValidationError("model parallelism requires one device per slice")
    axis = "out" if s.kind == "model_parallel_output_split" else "in"
    if axis == "in" and any(l.kind == "convolution" for l in m.layers):
        raise InfeasibleError("input splitting is modeled for fully connected layers only")
    shapes = G.infer_shapes(m)
    eb = m.element_bits
    weighted = m.weighted_layers()
    layer_slices = []
    for layer in weighted:
        in_shape = shapes[layer.predecessors[0]]
        slices = _sliced_layer_counts(layer, in_shape, shapes[layer.id], n, axis)
        act_bytes = shapes[layer.id].elements * eb // 8
        layer_slices.append((layer.id, [mac for _, mac in slices], act_bytes))
    in_bytes = math.prod(m.input_shape) * eb // 8
    dev_of = [placement.assignment[f"slice:{i}"] for i in range(n)]
    agg = placement.aggregator

    latencies = []
    for _ in range(n_inferences):
        t = [0.0] * n
        tx_done = 0.0
        for i in range(n):
            payload = in_bytes if axis == "out" else _share(in_bytes, n, i)
            tx_done += net.tx_time_s(payload)
            t[i] = tx_done + _msg(net, rng)
        for li, (layer_id, macs, act_bytes) in enumerate(layer_slices):
            comp_end = [
                run.compute(dev_of[i], t[i], devices[dev_of[i]].compute_time_s(macs[i]), layer_id)
                for i in range(n)
            ]
            last = li == len(layer_slices) - 1
            if axis == "out":
                if last:
                    finish = comp_end[agg]
                    for i in range(n):
                        if i != agg:
                            arrive = comp_end[i] + net.tx_time_s(_share(act_bytes, n, i)) + _msg(net, rng)
                            finish = max(finish, arrive)
                    latencies.append(finish)
                    break
                # all-gather; sender i's unicasts serialize on its link
                arrivals = [[0.0] * n for _ in range(n)]
                for i in range(n):
                    send_done = comp_end[i]
                    for j in range(n):
                        if j == i:
                            continue
                        send_done += net.tx_time_s(_share(act_bytes, n, i))
                        arrivals[j][i] = send_done + _msg(net, rng)
                t = [
                    max([comp_end[j]] + [arrivals[j][i] for i in range(n) if i != j])
                    for j in range(n)
                ]
            else:
                # reduce full partial sums to the aggregator, then re-scatter
                root_ready = comp_end[agg]
                for i in range(n):
                    if i != agg:
                        arrive = comp_end[i] + net.tx_time_s(act_bytes) + _msg(net, rng)
                        root_ready = max(root_ready, arrive)
                if last:
                    latencies.append(root_ready)
                    break
                tx_done = root_ready
                for i in range(n):
                    if i == agg:
                        t[i] = root_ready
                        continue
                    tx_done += net.tx_time_s(_share(act_bytes, n, i))
                    t[i] = tx_done + _msg(net, rng)
    return latencies


def _energy_from_accounting(
    busy: list[float], makespan: float, devices: list[S.DeviceSpec], n_inferences: int
) -> tuple[float, ...]:
    energy = []
    for dev, busy_s in zip(devices, busy):
        idle_s = makespan - busy_s
        energy.append((busy_s * dev.active_power_w + idle_s * dev.idle_power_w) / n_inferences)
    return tuple(energy)


def energy(result: SimResult, devices: list[S.DeviceSpec]) -> tuple[tuple[float, ...], float]:
    """Re-derive per-device and total joules per inference from the run trace."""
    if result.device_busy_s is None or len(result.device_busy_s) != len(devices):
        raise ValidationError("result carries no busy-time accounting for these devices")
    n = len(result.latencies_s)
    per_device = _energy_from_accounting(
        list(result.device_busy_s), result.makespan_s, devices, n
    )
    return per_device, sum(per_device)


def speedup(result: SimResult, baseline: SimResult) -> float:
    """Mean-latency speedup of `result` over `baseline`."""
    if result.mean_s <= 0:
        raise ValidationError("result has zero mean latency")
    return baseline.mean_s / result.mean_s


def latency_histogram(
    result: SimResult, bucket_width_s: float
) -> list[tuple[float, int]]:
    """Counts per fixed-width bucket; bucket key is its left edge."""
    if bucket_width_s <= 0:
        raise ValidationError("bucket width must be positive")
    counts: dict[int, int] = {}
    for lat in result.latencies_s:
        counts[int(lat // bucket_width_s)] = counts.get(int(lat // bucket_width_s), 0) + 1
    return [(k * bucket_width_s, counts[k]) for k in sorted(counts)]


def calibrate_efficiency(
    device: S.DeviceSpec, g: G.ModelGraph, target_latency_s: float
) -> S.DeviceSpec:
    """Derive the efficiency that makes the whole model take target_latency_s."""
    macs = G.total_footprint(g).total_macs
    eff = macs * 2.0 / (target_latency_s * device.peak_gops * 1e9)
    if not 0.0 < eff <= 1.0:
        raise InfeasibleError(
            f"calibration needs efficiency {eff:.4g}, outside (0, 1]; adjust peak_gops"
        )
    return replace(device, efficiency=eff)
