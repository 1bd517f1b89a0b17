"""Width-division splitter producing low-communication branch models.

A split model replaces one wide network with several narrow branches that
share only the input (or an optional unsplit stem) and one classifier that
consumes the concatenated pre-final activations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from . import graph as G
from .errors import InfeasibleError, OverSplitError, ParseError, ValidationError

REPLICATED_STEM = "replicated"
SHARED_STEM = "shared"


@dataclass(frozen=True)
class DeviceSpec:
    """Capability of one compute node. peak_gops is in giga-ops/s; 1 MAC = 2 ops."""

    mem_bytes: int
    peak_gops: float
    efficiency: float = 1.0
    active_power_w: float = 1.0
    idle_power_w: float = 0.1
    name: str = "device"

    def __post_init__(self) -> None:
        if self.mem_bytes <= 0 or self.peak_gops <= 0:
            raise ValidationError("device mem_bytes and peak_gops must be positive")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValidationError("device efficiency must be in (0, 1]")
        if self.active_power_w <= 0 or self.idle_power_w < 0:
            raise ValidationError("device power draws must be positive")

    @property
    def effective_ops_per_s(self) -> float:
        return self.peak_gops * 1e9 * self.efficiency

    def compute_time_s(self, macs: int) -> float:
        return macs * 2.0 / self.effective_ops_per_s


@dataclass(frozen=True)
class SplitConfig:
    division_factor: int = 2
    device: DeviceSpec | None = None
    fatten_step_percent: float = 0.10
    task_error_bound: float = 0.03
    framework_mem_overhead: int = 0
    latency_budget_s: float = 1.0
    stem_mode: str = REPLICATED_STEM
    fatten_cap_percent: float = 1.00

    def __post_init__(self) -> None:
        if self.division_factor < 2:
            raise ValidationError(f"division_factor must be >= 2, got {self.division_factor}")
        if not 0.0 < self.fatten_step_percent <= 1.0:
            raise ValidationError("fatten_step_percent must be in (0, 1]")
        if self.task_error_bound < 0:
            raise ValidationError("task_error_bound must be >= 0")
        if self.stem_mode not in (REPLICATED_STEM, SHARED_STEM):
            raise ValidationError(f"stem_mode must be replicated or shared, got {self.stem_mode!r}")


@dataclass(frozen=True)
class Provenance:
    original: str
    division_factors: tuple[int, ...] = ()
    fatten_percent: float = 0.0

    @property
    def key(self) -> str:
        """Accuracy-table key, e.g. 'resnet-18-split8-f40'."""
        count = math.prod(self.division_factors) if self.division_factors else 1
        key = self.original
        if count > 1:
            key += f"-split{count}"
        if self.fatten_percent > 0:
            key += f"-f{round(self.fatten_percent * 100)}"
        return key


@dataclass(frozen=True)
class SplitModel:
    """Disconnected branches plus a shared classifier (and optional stem)."""

    name: str
    input_shape: tuple[int, ...]
    branches: tuple[G.ModelGraph, ...]
    classifier: G.LayerSpec
    provenance: Provenance
    shared_head: tuple[G.LayerSpec, ...] = ()
    element_bits: int = 32

    def __post_init__(self) -> None:
        if not self.branches:
            raise ValidationError("split model requires at least one branch")
        if self.classifier.kind != "classifier_fc":
            raise ValidationError("shared classifier must be a classifier_fc layer")

    @property
    def split_count(self) -> int:
        return len(self.branches)

    def prefinal_ids(self) -> tuple[str, ...]:
        return tuple(f"b{i}.{br.sink.id}" for i, br in enumerate(self.branches))

    def to_graph(self) -> G.ModelGraph:
        """Flatten into one ModelGraph: input [-> stem] -> branches -> concat -> classifier."""
        layers: list[G.LayerSpec] = [G.LayerSpec(id="input", kind="input")]
        branch_feed = "input"
        for stem_layer in self.shared_head:
            layers.append(stem_layer)
            branch_feed = stem_layer.id
        for i, br in enumerate(self.branches):
            input_id = br.input_layer.id
            for layer in br.layers:
                if layer.kind == "input":
                    continue
                preds = tuple(
                    branch_feed if p == input_id else f"b{i}.{p}" for p in layer.predecessors
                )
                layers.append(replace(layer, id=f"b{i}.{layer.id}", predecessors=preds, branch=i))
        layers.append(
            G.LayerSpec(id="concat.prefinal", kind="concat", predecessors=self.prefinal_ids())
        )
        layers.append(replace(self.classifier, predecessors=("concat.prefinal",)))
        return G.ModelGraph(
            name=self.provenance.key,
            input_shape=self.input_shape,
            layers=tuple(layers),
            element_bits=self.element_bits,
        )

    def signature(self) -> str:
        """Layer-count signature over all branches plus shared layers."""
        all_layers = list(self.shared_head)
        for br in self.branches:
            all_layers.extend(l for l in br.layers if l.kind != "input")
        all_layers.append(self.classifier)
        return G.signature(all_layers)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def identity_split(g: G.ModelGraph) -> SplitModel:
    """The 1-branch split model structurally equivalent to the original."""
    return _build_split(g, passes=0, factor=2, stem_mode=REPLICATED_STEM)


def _classifier_of(g: G.ModelGraph) -> G.LayerSpec:
    sink = g.sink
    if sink.kind != "classifier_fc":
        raise ValidationError(
            f"model {g.name!r}: sink layer {sink.id!r} must be classifier_fc to split"
        )
    return sink


def divide_widths(
    g: G.ModelGraph, factor: int, passes: int = 1, stem_mode: str = REPLICATED_STEM
) -> G.ModelGraph:
    """Replicate body layers per branch with widths / factor**passes (ceiling).

    The result carries branch tags and still contains every cross-branch
    edge; remove_non_branch_connections prunes it down to parallel branches.
    """
    classifier = _classifier_of(g)
    order = G.topological_order(g)
    n_branches = factor**passes
    divisor = factor**passes

    stem_ids: set[str] = set()
    if stem_mode == SHARED_STEM:
        # stem = prefix chain up to and including the first weighted layer
        for layer in order:
            if layer.kind == "input":
                continue
            stem_ids.add(layer.id)
            if layer.kind in G.WEIGHTED_KINDS:
                break

    body = [
        l
        for l in order
        if l.kind != "input" and l.id != classifier.id and l.id not in stem_ids
    ]
    input_id = g.input_layer.id

    def branch_copy(layer: G.LayerSpec, b: int) -> G.LayerSpec:
        width = layer.width
        copy = layer if width is None else layer.with_width(_ceil_div(width, divisor))
        preds: list[str] = []
        for p in layer.predecessors:
            if p == input_id or p in stem_ids:
                preds.append(p)
            elif layer.kind == "add":
                # residual joins are intrinsically per-branch: an add cannot
                # legally carry one edge per branch copy
                preds.append(f"b{b}.{p}")
            else:
                preds.extend(f"b{j}.{p}" for j in range(n_branches))
        return replace(copy, id=f"b{b}.{layer.id}", predecessors=tuple(preds), branch=b)

    layers: list[G.LayerSpec] = [g.input_layer]
    layers.extend(l for l in order if l.id in stem_ids)
    for b in range(n_branches):
        layers.extend(branch_copy(l, b) for l in body)
    prefinal = body[-1].id if body else input_id
    cls_preds = tuple(f"b{b}.{prefinal}" for b in range(n_branches))
    layers.append(replace(classifier, predecessors=cls_preds))
    return G.ModelGraph(
        name=f"{g.name}-divided{n_branches}",
        input_shape=g.input_shape,
        layers=tuple(layers),
        element_bits=g.element_bits,
    )


def remove_non_branch_connections(g: G.ModelGraph) -> G.ModelGraph:
    """Keep only same-branch predecessors on branch-tagged layers.

    Shared layers (input, stem, classifier) keep every edge. Idempotent.
    """
    by_id = {l.id: l for l in g.layers}
    new_layers: list[G.LayerSpec] = []
    for layer in g.layers:
        if layer.branch is None:
            new_layers.append(layer)
            continue
        kept = tuple(
            p
            for p in layer.predecessors
            if by_id[p].branch is None or by_id[p].branch == layer.branch
        )
        if not kept:
            raise ValidationError(f"layer {layer.id!r}: no predecessors left after pruning")
        new_layers.append(replace(layer, predecessors=kept))
    return G.ModelGraph(
        name=g.name, input_shape=g.input_shape, layers=tuple(new_layers), element_bits=g.element_bits
    )


def _carve(
    g: G.ModelGraph,
    divided: G.ModelGraph,
    n_branches: int,
    factors: tuple[int, ...],
    stem_mode: str,
    fatten_percent: float = 0.0,
) -> SplitModel:
    """Package a pruned divided graph into a SplitModel."""
    classifier = divided.sink
    stem = tuple(
        l for l in G.topological_order(divided) if l.branch is None and l.kind != "input" and l.id != classifier.id
    )
    shapes = G.infer_shapes(divided) if stem else None
    if stem:
        branch_input_shape = shapes[stem[-1].id].dims
        feed_id = stem[-1].id
    else:
        branch_input_shape = g.input_shape
        feed_id = divided.input_layer.id

    branches = []
    for b in range(n_branches):
        prefix = f"b{b}."
        members = [l for l in divided.layers if l.branch == b]
        branch_layers: list[G.LayerSpec] = [G.LayerSpec(id="input", kind="input")]
        for layer in members:
            preds = tuple(
                "input" if p == feed_id else p[len(prefix):] for p in layer.predecessors
            )
            branch_layers.append(
                replace(layer, id=layer.id[len(prefix):], predecessors=preds, branch=None)
            )
        branches.append(
            G.ModelGraph(
                name=f"{g.name}-branch{b}",
                input_shape=branch_input_shape,
                layers=tuple(branch_layers),
                element_bits=g.element_bits,
            )
        )
    return SplitModel(
        name=g.name,
        input_shape=g.input_shape,
        branches=tuple(branches),
        classifier=replace(classifier, predecessors=("concat.prefinal",), branch=None),
        provenance=Provenance(
            original=g.name, division_factors=factors, fatten_percent=fatten_percent
        ),
        shared_head=stem,
        element_bits=g.element_bits,
    )


def _build_split(
    g: G.ModelGraph, passes: int, factor: int, stem_mode: str
) -> SplitModel:
    if passes == 0:
        divided = divide_widths(g, factor=2, passes=0, stem_mode=stem_mode)
        return _carve(g, remove_non_branch_connections(divided), 1, (), stem_mode)
    divided = divide_widths(g, factor=factor, passes=passes, stem_mode=stem_mode)
    pruned = remove_non_branch_connections(divided)
    return _carve(g, pruned, factor**passes, (factor,) * passes, stem_mode)


def split_to_branches(
    g: G.ModelGraph, branches: int, division_factor: int = 2, stem_mode: str = REPLICATED_STEM
) -> SplitModel:
    """Split directly to a target branch count (must be a power of the factor)."""
    if branches == 1:
        return identity_split(g)
    passes = round(math.log(branches, division_factor))
    if division_factor**passes != branches:
        raise InfeasibleError(
            f"branch count {branches} is not a power of division factor {division_factor}"
        )
    return _build_split(g, passes=passes, factor=division_factor, stem_mode=stem_mode)


def branch_footprint(sm: SplitModel) -> G.FootprintReport:
    """Footprint of one branch (branches are identical by construction)."""
    return G.total_footprint(sm.branches[0])


def _peak_activation_bytes(g: G.ModelGraph) -> int:
    shapes = G.infer_shapes(g)
    peak = 0
    for layer in g.layers:
        out_b = shapes[layer.id].elements * g.element_bits // 8
        in_b = sum(shapes[p].elements * g.element_bits // 8 for p in layer.predecessors)
        peak = max(peak, in_b + out_b)
    return peak


def _fits(sm: SplitModel, cfg: SplitConfig) -> tuple[bool, str]:
    assert cfg.device is not None
    fp = branch_footprint(sm)
    mem_need = fp.model_bytes + _peak_activation_bytes(sm.branches[0]) + cfg.framework_mem_overhead
    mem_ok = mem_need <= cfg.device.mem_bytes
    mac_ok = cfg.device.compute_time_s(fp.total_macs) <= cfg.latency_budget_s
    if mem_ok and mac_ok:
        return True, ""
    heaviest = max(fp.per_layer, key=lambda e: (e.params, e.macs))
    return False, heaviest.layer_id


def split(g: G.ModelGraph, cfg: SplitConfig) -> SplitModel:
    """Divide widths until one branch fits the device, per the design loop.

    Each pass divides every non-classifier width by the division factor
    (ceiling) and prunes cross-branch edges; the loop exits when a branch
    fits both the memory budget and the latency budget.
    """
    if cfg.device is None:
        raise ValidationError("split requires a device in the config")
    _classifier_of(g)
    passes = 0
    sm = _build_split(g, passes=0, factor=cfg.division_factor, stem_mode=cfg.stem_mode)
    while True:
        ok, limiting = _fits(sm, cfg)
        if ok:
            return sm
        candidate = _build_split(
            g, passes=passes + 1, factor=cfg.division_factor, stem_mode=cfg.stem_mode
        )
        if branch_footprint(candidate).total_params >= branch_footprint(sm).total_params:
            # widths saturated at 1; further division cannot shrink a branch
            raise OverSplitError(
                f"model {g.name!r} cannot fit device {cfg.device.name!r} even at "
                f"maximal split; limiting layer {limiting!r}"
            )
        passes += 1
        sm = candidate


def fatten(sm: SplitModel, percent: float) -> SplitModel:
    """Scale every branch width by (1 + percent), ceiling; classifier untouched."""
    if percent < 0:
        raise ValidationError(f"fatten percent must be >= 0, got {percent}")
    if percent == 0:
        return sm
    scale = 1.0 + percent

    def fatten_branch(br: G.ModelGraph) -> G.ModelGraph:
        new_layers = tuple(
            l if l.width is None else l.with_width(math.ceil(l.width * scale))
            for l in br.layers
        )
        return replace(br, layers=new_layers)

    combined = (1.0 + sm.provenance.fatten_percent) * scale - 1.0
    return replace(
        sm,
        branches=tuple(fatten_branch(b) for b in sm.branches),
        provenance=replace(sm.provenance, fatten_percent=round(combined, 9)),
    )


class AccuracyTable:
    """Accuracy oracle backed by a {provenance key: top-1} table."""

    def __init__(self, table: dict[str, float]):
        self.table = dict(table)

    @classmethod
    def load(cls, path: str) -> "AccuracyTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def __call__(self, sm: SplitModel) -> float:
        key = sm.provenance.key
        if key not in self.table:
            raise KeyError(f"accuracy table has no entry for {key!r}")
        return self.table[key]


def design_loop(
    g: G.ModelGraph,
    cfg: SplitConfig,
    accuracy_oracle: Callable[[SplitModel], float],
) -> SplitModel:
    """Split, then fatten in steps until accuracy is within the error bound."""
    original_acc = accuracy_oracle(identity_split(g))
    target = original_acc - cfg.task_error_bound
    base = split(g, cfg)
    attempts: list[tuple[float, float]] = []
    percent = 0.0
    candidate = base
    while True:
        acc = accuracy_oracle(candidate)
        attempts.append((percent, acc))
        if acc >= target:
            return candidate
        percent = round(percent + cfg.fatten_step_percent, 9)
        if percent > cfg.fatten_cap_percent + 1e-12:
            trace = ", ".join(f"f{round(p * 100)}={a:.2f}" for p, a in attempts)
            best = max(a for _, a in attempts)
            raise InfeasibleError(
                f"fattening cap {cfg.fatten_cap_percent:.0%} reached without meeting "
                f"accuracy target {target:.2f} (best gap {target - best:.2f}; {trace})"
            )
        candidate = fatten(base, percent)


# --- split-model serialization ------------------------------------------------


def serialize_split_model(sm: SplitModel) -> dict[str, Any]:
    return {
        "name": sm.name,
        "kind": "split_model",
        "input_shape": list(sm.input_shape),
        "element_bits": sm.element_bits,
        "split_count": sm.split_count,
        "provenance": {
            "original": sm.provenance.original,
            "division_factors": list(sm.provenance.division_factors),
            "fatten_percent": sm.provenance.fatten_percent,
        },
        "shared_head": [G._layer_to_dict(l) for l in sm.shared_head],
        "branches": [
            [G._layer_to_dict(l) for l in br.layers if l.kind != "input"]
            for br in sm.branches
        ],
        "branch_input_shape": list(sm.branches[0].input_shape),
        "classifier": G._layer_to_dict(sm.classifier),
    }


def parse_split_model(document: str | dict[str, Any]) -> SplitModel:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    if document.get("kind") != "split_model":
        raise ParseError("document is not a split model (kind != 'split_model')")
    for required in ("name", "input_shape", "branches", "classifier", "provenance"):
        if required not in document:
            raise ParseError(f"split model document missing field {required!r}")
    eb = int(document.get("element_bits", 32))
    branch_input = tuple(int(d) for d in document["branch_input_shape"])
    branches = []
    for i, entries in enumerate(document["branches"]):
        layers = [G.LayerSpec(id="input", kind="input")]
        layers.extend(G.layer_from_dict(e) for e in entries)
        branches.append(
            G.ModelGraph(
                name=f"{document['name']}-branch{i}",
                input_shape=branch_input,
                layers=tuple(layers),
                element_bits=eb,
            )
        )
    prov = document["provenance"]
    classifier = G.layer_from_dict(document["classifier"])
    return SplitModel(
        name=document["name"],
        input_shape=tuple(int(d) for d in document["input_shape"]),
        branches=tuple(branches),
        classifier=classifier,
        provenance=Provenance(
            original=prov["original"],
            division_factors=tuple(prov.get("division_factors", ())),
            fatten_percent=float(prov.get("fatten_percent", 0.0)),
        ),
        shared_head=tuple(G.layer_from_dict(e) for e in document.get("shared_head", [])),
        element_bits=eb,
    )


def load_split_model(path: str) -> SplitModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_split_model(fh.read())
