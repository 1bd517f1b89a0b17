"""Closed-form per-device footprints and per-inference communication loads
for data parallelism, model parallelism (output/input splitting), and LCP.

Connection pairs are counted as distinct unordered device pairs per
communication boundary, summed over boundaries; the source node counts as a
pair participant. Classification output stays at the aggregator for LCP, so
its pair total is exactly input-broadcast + pre-final-gather = 2b - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

from . import graph as G
from . import splitter as S
from .errors import InfeasibleError, ValidationError

STRATEGY_KINDS = (
    "data_parallel",
    "model_parallel_output_split",
    "model_parallel_input_split",
    "lcp",
)


@dataclass(frozen=True)
class Strategy:
    kind: str
    n_devices: int = 1

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValidationError(f"unknown strategy kind {self.kind!r}")
        if self.n_devices < 1:
            raise ValidationError("n_devices must be >= 1")


@dataclass(frozen=True)
class Boundary:
    label: str
    bytes: int
    pairs: int


@dataclass(frozen=True)
class CommReport:
    connection_pairs: int
    bytes_per_inference: int
    per_boundary: tuple[Boundary, ...]

    def __post_init__(self) -> None:
        assert self.connection_pairs == sum(b.pairs for b in self.per_boundary)
        assert self.bytes_per_inference == sum(b.bytes for b in self.per_boundary)


def _share(total: int, n: int, index: int) -> int:
    """Contiguous partition size; remainders go to earlier devices."""
    base, rem = divmod(total, n)
    return base + (1 if index < rem else 0)


def _sliced_layer_counts(
    layer: G.LayerSpec, in_shape: G.TensorShape, out_shape: G.TensorShape, n: int, axis: str
) -> list[tuple[int, int]]:
    """(params, macs) of each device's slice of one weighted layer.

    Slices partition the chosen axis exactly: summing slices over devices
    reconstructs the original counts with no loss or double count.
    """
    params = G.layer_params(layer, in_shape)
    macs = G.layer_macs(layer, in_shape, out_shape)
    if layer.kind in ("fully_connected", "classifier_fc"):
        out = layer.out_features
        per_in = in_shape.elements
        if axis == "out":
            return [
                (_share(out, n, i) * (per_in + 1), _share(out, n, i) * per_in)
                for i in range(n)
            ]
        per_out_in = in_shape.elements
        slices = []
        for i in range(n):
            ins = _share(per_out_in, n, i)
            bias = out if i == 0 else 0  # bias applied once at the reduction
            slices.append((ins * out + bias, ins * out))
        return slices
    if layer.kind == "convolution":
        out = layer.out_channels
        per_ch_params = (params - out) // out  # kernel volume per output channel
        per_ch_macs = macs // out
        if axis == "out":
            return [
                (_share(out, n, i) * (per_ch_params + 1), _share(out, n, i) * per_ch_macs)
                for i in range(n)
            ]
        cin = in_shape.dims[0]
        slices = []
        for i in range(n):
            frac_params = round((params - out) * _share(cin, n, i) / cin)
            frac_macs = round(macs * _share(cin, n, i) / cin)
            slices.append((frac_params + (out if i == 0 else 0), frac_macs))
        return slices
    return [(0, 0)] * n


def per_device_footprint(
    m: G.ModelGraph | S.SplitModel, s: Strategy
) -> list[G.FootprintReport]:
    """Per-device params/MACs/memory under a distribution strategy."""
    n = s.n_devices
    if s.kind == "data_parallel":
        if isinstance(m, S.SplitModel):
            m = m.to_graph()
        report = G.total_footprint(m)
        return [report] * n

    if s.kind in ("model_parallel_output_split", "model_parallel_input_split"):
        if isinstance(m, S.SplitModel):
            m = m.to_graph()
        axis = "out" if s.kind == "model_parallel_output_split" else "in"
        if axis == "in" and any(l.kind == "convolution" for l in m.layers):
            raise InfeasibleError(
                "input splitting is modeled for fully connected layers only"
            )
        shapes = G.infer_shapes(m)
        eb = m.element_bits
        per_dev_entries: list[list[G.LayerFootprint]] = [[] for _ in range(n)]
        for layer in G.topological_order(m):
            in_shape = shapes[layer.predecessors[0]] if layer.predecessors else None
            out_shape = shapes[layer.id]
            act = out_shape.elements * eb // 8
            for i, (p, mc) in enumerate(
                _sliced_layer_counts(layer, in_shape, out_shape, n, axis)
                if layer.kind in G.WEIGHTED_KINDS
                else [(0, 0)] * n
            ):
                per_dev_entries[i].append(
                    G.LayerFootprint(layer.id, p, mc, _share(act, n, i))
                )
        reports = []
        for entries in per_dev_entries:
            tp = sum(e.params for e in entries)
            tm = sum(e.macs for e in entries)
            reports.append(
                G.FootprintReport(tp, tm, tuple(entries), tp * eb // 8)
            )
        return reports

    # lcp
    if not isinstance(m, S.SplitModel):
        raise ValidationError("lcp strategy requires a split model")
    b = m.split_count
    if n < b:
        raise InfeasibleError(f"lcp needs n_devices >= {b} branches, got {n}")
    eb = m.element_bits
    reports = []
    cls_graph = _classifier_graph(m)
    cls_fp = G.total_footprint(cls_graph)
    cls_entries = tuple(e for e in cls_fp.per_layer if e.params or e.macs)
    stem_entries: tuple[G.LayerFootprint, ...] = ()
    if m.shared_head:
        full = G.total_footprint(m.to_graph())
        stem_ids = {l.id for l in m.shared_head}
        stem_entries = tuple(e for e in full.per_layer if e.layer_id in stem_ids)
    for i in range(n):
        entries: list[G.LayerFootprint] = []
        if i < b:
            entries.extend(G.total_footprint(m.branches[i]).per_layer)
        if i == 0:
            entries.extend(stem_entries)  # stem rides on the aggregator
            entries.extend(cls_entries)
        tp = sum(e.params for e in entries)
        tm = sum(e.macs for e in entries)
        reports.append(G.FootprintReport(tp, tm, tuple(entries), tp * eb // 8))
    return reports


def _classifier_graph(sm: S.SplitModel) -> G.ModelGraph:
    """Tiny graph exposing the classifier with its concatenated input width."""
    prefinal = sum(
        G.infer_shapes(br)[br.sink.id].elements for br in sm.branches
    )
    layers = (
        G.LayerSpec(id="input", kind="input"),
        replace(sm.classifier, predecessors=("input",)),
    )
    return G.ModelGraph(
        name=f"{sm.name}-classifier",
        input_shape=(prefinal,),
        layers=layers,
        element_bits=sm.element_bits,
    )


def _weighted_boundary_acts(m: G.ModelGraph, eb: int) -> list[tuple[str, int]]:
    """(layer id, activation bytes) for every weighted layer, in order."""
    shapes = G.infer_shapes(m)
    return [
        (l.id, shapes[l.id].elements * eb // 8) for l in m.weighted_layers()
    ]


def communication_load(
    m: G.ModelGraph | S.SplitModel, s: Strategy, element_bits: int | None = None
) -> CommReport:
    """Per-inference payload bytes and connection pairs for a strategy."""
    n = s.n_devices
    if s.kind == "lcp":
        if not isinstance(m, S.SplitModel):
            raise ValidationError("lcp strategy requires a split model")
        if n < m.split_count:
            raise InfeasibleError(
                f"lcp needs n_devices >= {m.split_count} branches, got {n}"
            )
        eb = m.element_bits if element_bits is None else element_bits
        b = m.split_count
        branch_in = math.prod(m.branches[0].input_shape) * eb // 8
        boundaries = [Boundary("input_broadcast", branch_in * b, b)]
        gather_bytes = 0
        for i, br in enumerate(m.branches):
            if i == 0:
                continue  # aggregator hosts branch 0; its pre-final stays local
            shapes = G.infer_shapes(br)
            gather_bytes += shapes[br.sink.id].elements * eb // 8
        boundaries.append(Boundary("prefinal_gather", gather_bytes, b - 1))
        return _report(boundaries)

    if isinstance(m, S.SplitModel):
        m = m.to_graph()
    eb = m.element_bits if element_bits is None else element_bits
    in_bytes = math.prod(m.input_shape) * eb // 8
    acts = _weighted_boundary_acts(m, eb)
    out_bytes = acts[-1][1]

    if s.kind == "data_parallel":
        boundaries = [
            Boundary("input", in_bytes, 1),
            Boundary("output", out_bytes, 1),
        ]
        return _report(boundaries)

    if n == 1:
        return _report([Boundary("input", in_bytes, 1), Boundary("output", out_bytes, 1)])

    if s.kind == "model_parallel_output_split":
        boundaries = [Boundary("input_broadcast", in_bytes * n, n)]
        for layer_id, act in acts[:-1]:
            # all-gather: every device sends its shard to the n-1 others
            boundaries.append(
                Boundary(f"allgather:{layer_id}", act * (n - 1), n * (n - 1) // 2)
            )
        boundaries.append(Boundary("output_gather", out_bytes, n - 1))
        return _report(boundaries)

    # model_parallel_input_split: fc-only, partial sums reduced to one node
    if any(l.kind == "convolution" for l in m.layers):
        raise InfeasibleError("input splitting is modeled for fully connected layers only")
    boundaries = [Boundary("input_scatter", in_bytes, n)]
    for layer_id, act in acts:
        boundaries.append(Boundary(f"reduce:{layer_id}", act * (n - 1), n - 1))
        if layer_id != acts[-1][0]:
            scatter = act - _share(act, n, 0)  # root keeps its own slice
            boundaries.append(Boundary(f"scatter:{layer_id}", scatter, n - 1))
    return _report(boundaries)


def _report(boundaries: list[Boundary]) -> CommReport:
    return CommReport(
        connection_pairs=sum(b.pairs for b in boundaries),
        bytes_per_inference=sum(b.bytes for b in boundaries),
        per_boundary=tuple(boundaries),
    )


#: normative column order for comparison tables
COMPARE_COLUMNS = (
    "strategy",
    "n",
    "device",
    "params",
    "macs",
    "mem_bytes",
    "comm_bytes",
    "comm_pairs",
)


def compare_strategies(
    m: G.ModelGraph,
    strategies: list[Strategy],
    element_bits: int | None = None,
    split_models: dict[int, S.SplitModel] | None = None,
    stem_mode: str = S.REPLICATED_STEM,
) -> list[dict[str, Any]]:
    """One row per strategy: worst-device footprint plus global comm totals."""
    split_models = dict(split_models or {})
    rows = []
    for s in strategies:
        subject: G.ModelGraph | S.SplitModel = m
        if s.kind == "lcp":
            if s.n_devices not in split_models:
                split_models[s.n_devices] = S.split_to_branches(
                    m, s.n_devices, stem_mode=stem_mode
                )
            subject = split_models[s.n_devices]
        footprints = per_device_footprint(subject, s)
        comm = communication_load(subject, s, element_bits)
        worst = max(range(len(footprints)), key=lambda i: footprints[i].total_params)
        fp = footprints[worst]
        rows.append(
            {
                "strategy": s.kind,
                "n": s.n_devices,
                "device": worst,
                "params": fp.total_params,
                "macs": fp.total_macs,
                "mem_bytes": fp.model_bytes,
                "comm_bytes": comm.bytes_per_inference,
                "comm_pairs": comm.connection_pairs,
            }
        )
    return rows
