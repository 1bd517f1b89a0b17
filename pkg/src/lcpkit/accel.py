"""Analytic latency/throughput model of a weight-stationary systolic array
tuned for single-batch edge inference.

Each fc/conv layer lowers to matrix products M x K . K x N (conv via patch
flattening, no halo reuse). The stationary operand splits into cols x rows
blocks; the streaming operand re-streams once per 64-wide output column
group, which caps data reuse at 2 * array_rows ops per element. Latency per
layer is a roofline: max(compute cycles, memory traffic) at the array clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator

from . import graph as G
from .errors import ValidationError


@dataclass(frozen=True)
class AccelConfig:
    array_cols: int = 32
    array_rows: int = 64
    clock_hz: float = 100e6
    mem_bandwidth_bytes_s: float = 3.4e9
    adder_tree_stages: int | None = None
    stationary_buffer_depth: int = 8
    element_bits: int = 16
    name: str = "accel"
    power_w: float | None = None  # reporting metadata only
    area_mm2: float | None = None

    def __post_init__(self) -> None:
        if min(self.array_cols, self.array_rows) < 1:
            raise ValidationError("array dims must be >= 1")
        if self.clock_hz <= 0 or self.mem_bandwidth_bytes_s <= 0:
            raise ValidationError("clock and bandwidth must be positive")
        if self.stationary_buffer_depth < 0:
            raise ValidationError("stationary_buffer_depth must be >= 0")
        expected = max(1, math.ceil(math.log2(self.array_cols)))
        if self.adder_tree_stages is None:
            object.__setattr__(self, "adder_tree_stages", expected)
        elif self.adder_tree_stages != expected:
            raise ValidationError(
                f"adder_tree_stages must be ceil(log2(array_cols)) = {expected}"
            )

    @property
    def macs_per_cycle(self) -> int:
        return self.array_cols * self.array_rows

    @property
    def ops_per_byte(self) -> float:
        """Peak data reuse: each streamed element meets array_rows cells."""
        return 2.0 * self.array_rows / (self.element_bits / 8)


def peak_throughput(cfg: AccelConfig) -> float:
    """Attainable ops/s: min(compute peak, bandwidth * peak reuse)."""
    compute = 2.0 * cfg.macs_per_cycle * cfg.clock_hz
    return min(compute, cfg.mem_bandwidth_bytes_s * cfg.ops_per_byte)


@dataclass(frozen=True)
class QuantPruneSpec:
    quant_bits: int = 16
    prune_fraction_per_conv: float = 0.45
    lossless: bool = True  # metadata: <=0.1% accuracy impact asserted upstream

    def __post_init__(self) -> None:
        if self.quant_bits not in (8, 16, 32):
            raise ValidationError("quant_bits must be 8, 16, or 32")
        if not 0.0 <= self.prune_fraction_per_conv < 1.0:
            raise ValidationError("prune fraction must be in [0, 1)")


@dataclass(frozen=True)
class Gemm:
    """One M x K . K x N product; `count` identical instances (conv groups).

    `scale` thins work and traffic uniformly (structured pruning keeps that
    fraction of output channels, so cycles and bytes shrink proportionally).
    """

    rows_m: int
    inner_k: int
    cols_n: int
    count: int = 1
    scale: float = 1.0


@dataclass(frozen=True)
class BlockSchedule:
    layer_id: str
    gemms: tuple[Gemm, ...]
    array_cols: int = 32
    array_rows: int = 64

    @property
    def block_count(self) -> int:
        return sum(
            g.count * _ceil(g.inner_k, self.array_cols) * _ceil(g.cols_n, self.array_rows)
            for g in self.gemms
        )

    @property
    def macs(self) -> float:
        return sum(g.count * g.scale * g.rows_m * g.inner_k * g.cols_n for g in self.gemms)

    def blocks(self) -> Iterator[tuple[int, str, int]]:
        """(index, operand type, stream length) per stationary block."""
        index = 0
        for g in self.gemms:
            per_instance = _ceil(g.inner_k, self.array_cols) * _ceil(g.cols_n, self.array_rows)
            for _ in range(g.count * per_instance):
                yield (index, "stationary", g.rows_m)
                index += 1


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


def tile_layer(
    layer: G.LayerSpec,
    in_shape: G.TensorShape | None,
    out_shape: G.TensorShape | None,
    cfg: AccelConfig | None = None,
) -> BlockSchedule:
    """Lower one layer to GEMM tiles; non-matmul kinds get a zero-cost entry."""
    cfg = cfg or AccelConfig()
    if layer.kind in ("fully_connected", "classifier_fc"):
        gemms = (Gemm(rows_m=1, inner_k=in_shape.elements, cols_n=layer.out_features),)
    elif layer.kind == "convolution":
        cin = in_shape.dims[0]
        _, oh, ow = out_shape.dims
        kh, kw = layer.kernel
        groups = layer.groups
        gemms = (
            Gemm(
                rows_m=oh * ow,
                inner_k=kh * kw * (cin // groups),
                cols_n=layer.out_channels // groups,
                count=groups,
                scale=layer.keep_fraction,
            ),
        )
    else:
        gemms = ()
    return BlockSchedule(
        layer_id=layer.id, gemms=gemms, array_cols=cfg.array_cols, array_rows=cfg.array_rows
    )


def schedule_cycles(schedule: BlockSchedule, cfg: AccelConfig) -> float:
    """Compute cycles: each block streams its rows through the adder tree;
    blocks beyond the stationary buffer pay a full array reload."""
    cycles = 0.0
    n_blocks = 0.0
    for g in schedule.gemms:
        per_instance = _ceil(g.inner_k, cfg.array_cols) * _ceil(g.cols_n, cfg.array_rows)
        blocks = g.count * per_instance * g.scale
        cycles += blocks * (g.rows_m + cfg.adder_tree_stages)
        n_blocks += blocks
    cycles += cfg.array_rows * max(0.0, n_blocks - cfg.stationary_buffer_depth)
    return cycles


def schedule_mem_bytes(schedule: BlockSchedule, element_bits: int) -> float:
    """Traffic: weights once, stream once per output column group, outputs once."""
    ebytes = element_bits // 8
    total = 0.0
    for g in schedule.gemms:
        col_groups = _ceil(g.cols_n, schedule.array_rows)
        weights = g.inner_k * g.cols_n
        stream = g.rows_m * g.inner_k * col_groups
        out = g.rows_m * g.cols_n
        total += g.count * g.scale * (weights + stream + out) * ebytes
    return total


def layer_latency(
    layer: G.LayerSpec,
    in_shape: G.TensorShape | None,
    out_shape: G.TensorShape | None,
    cfg: AccelConfig,
    element_bits: int | None = None,
) -> float:
    """Roofline seconds for one layer: max(compute, memory)."""
    eb = cfg.element_bits if element_bits is None else element_bits
    schedule = tile_layer(layer, in_shape, out_shape, cfg)
    compute_s = schedule_cycles(schedule, cfg) / cfg.clock_hz
    memory_s = schedule_mem_bytes(schedule, eb) / cfg.mem_bandwidth_bytes_s
    return max(compute_s, memory_s)


def layer_throughput(
    layer: G.LayerSpec,
    in_shape: G.TensorShape | None,
    out_shape: G.TensorShape | None,
    cfg: AccelConfig,
    element_bits: int | None = None,
) -> float:
    """Effective ops/s for one layer; always <= peak_throughput at cfg width."""
    latency = layer_latency(layer, in_shape, out_shape, cfg, element_bits)
    if latency == 0:
        return 0.0
    schedule = tile_layer(layer, in_shape, out_shape, cfg)
    return 2.0 * schedule.macs / latency


def model_latency(
    m: G.ModelGraph,
    cfg: AccelConfig,
    element_bits: int | None = None,
    switch_overhead_s: float = 0.0,
) -> float:
    """Sum of layer latencies plus a per-weighted-layer switch overhead."""
    eb = m.element_bits if element_bits is None else element_bits
    shapes = G.infer_shapes(m)
    total = 0.0
    for layer in G.topological_order(m):
        if layer.kind not in G.WEIGHTED_KINDS:
            continue
        in_shape = shapes[layer.predecessors[0]]
        total += layer_latency(layer, in_shape, shapes[layer.id], cfg, eb)
        total += switch_overhead_s
    return total


def layer_report(
    m: G.ModelGraph, cfg: AccelConfig, element_bits: int | None = None
) -> list[dict[str, float | int | str]]:
    """Per-layer roofline breakdown for report emission."""
    eb = m.element_bits if element_bits is None else element_bits
    shapes = G.infer_shapes(m)
    rows = []
    for layer in G.topological_order(m):
        if layer.kind not in G.WEIGHTED_KINDS:
            continue
        in_shape = shapes[layer.predecessors[0]]
        schedule = tile_layer(layer, in_shape, shapes[layer.id], cfg)
        compute_s = schedule_cycles(schedule, cfg) / cfg.clock_hz
        memory_s = schedule_mem_bytes(schedule, eb) / cfg.mem_bandwidth_bytes_s
        rows.append(
            {
                "layer": layer.id,
                "blocks": schedule.block_count,
                "macs": schedule.macs,
                "compute_s": compute_s,
                "memory_s": memory_s,
                "latency_s": max(compute_s, memory_s),
                "bound": "memory" if memory_s > compute_s else "compute",
            }
        )
    return rows


def apply_quant_prune(m: G.ModelGraph, qp: QuantPruneSpec) -> G.ModelGraph:
    """Quantize element width and scale conv layers by the kept fraction."""
    keep = 1.0 - qp.prune_fraction_per_conv
    layers = tuple(
        replace(l, keep_fraction=round(l.keep_fraction * keep, 9))
        if l.kind == "convolution"
        else l
        for l in m.layers
    )
    return replace(m, layers=layers, element_bits=qp.quant_bits)
