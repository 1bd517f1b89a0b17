"""Typed DNN model graph with shape inference and exact parameter/MAC accounting.

The graph is a DAG of layers with named predecessors. All values are frozen
after construction; every operation returns new objects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterator

from .errors import ParseError, ShapeError, ValidationError

LAYER_KINDS = (
    "input",
    "fully_connected",
    "convolution",
    "pooling",
    "normalization",
    "dropout",
    "activation",
    "add",
    "concat",
    "classifier_fc",
)

#: kinds that carry weights and a divisible output width
WEIGHTED_KINDS = ("fully_connected", "convolution", "classifier_fc")


def _pair(value: Any) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    h, w = value
    return (int(h), int(w))


@dataclass(frozen=True)
class TensorShape:
    """Activation shape: (channels, height, width) or (features,)."""

    dims: tuple[int, ...]
    element_bits: int = 32

    def __post_init__(self) -> None:
        if not self.dims or any(d < 1 for d in self.dims):
            raise ShapeError(f"all dims must be >= 1, got {self.dims}")
        if self.element_bits not in (8, 16, 32):
            raise ValidationError(f"element_bits must be 8, 16, or 32, got {self.element_bits}")

    @property
    def elements(self) -> int:
        return math.prod(self.dims)

    @property
    def size_bytes(self) -> int:
        return self.elements * self.element_bits // 8


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model graph; attribute relevance depends on `kind`."""

    id: str
    kind: str
    predecessors: tuple[str, ...] = ()
    # fully_connected / classifier_fc
    out_features: int | None = None
    # convolution
    out_channels: int | None = None
    kernel: tuple[int, int] | None = None
    stride: tuple[int, int] | None = None
    padding: tuple[int, int] | None = None
    groups: int = 1
    # pooling (window + stride + mode)
    window: tuple[int, int] | None = None
    mode: str | None = None
    # dropout
    rate: float | None = None
    # branch tag assigned by the splitter; None for shared layers
    branch: int | None = None
    # structured-pruning survivor fraction; scales params/MACs of conv layers
    keep_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"layer {self.id!r}: unknown kind {self.kind!r}")
        n_pred = len(self.predecessors)
        if self.kind == "input":
            if n_pred != 0:
                raise ValidationError(f"layer {self.id!r}: input takes no predecessors")
        elif self.kind == "add":
            if n_pred != 2:
                raise ValidationError(f"layer {self.id!r}: add requires exactly 2 predecessors")
        elif n_pred < 1:
            raise ValidationError(f"layer {self.id!r}: requires at least 1 predecessor")
        if self.kind in ("fully_connected", "classifier_fc"):
            if self.out_features is None or self.out_features < 1:
                raise ValidationError(f"layer {self.id!r}: out_features must be >= 1")
        if self.kind == "convolution":
            if self.out_channels is None or self.out_channels < 1:
                raise ValidationError(f"layer {self.id!r}: out_channels must be >= 1")
            for name in ("kernel", "stride"):
                dims = getattr(self, name)
                if dims is None or any(d < 1 for d in dims):
                    raise ValidationError(f"layer {self.id!r}: {name} dims must be >= 1")
            if self.padding is not None and any(p < 0 for p in self.padding):
                raise ValidationError(f"layer {self.id!r}: padding must be >= 0")
            if self.groups < 1 or self.out_channels % self.groups:
                raise ValidationError(f"layer {self.id!r}: groups must divide out_channels")
        if self.kind == "pooling":
            if self.window is None or any(d < 1 for d in self.window):
                raise ValidationError(f"layer {self.id!r}: window dims must be >= 1")
            if self.stride is None or any(d < 1 for d in self.stride):
                raise ValidationError(f"layer {self.id!r}: stride dims must be >= 1")
            if self.mode not in ("max", "avg"):
                raise ValidationError(f"layer {self.id!r}: pooling mode must be max or avg")
        if self.kind == "dropout":
            if self.rate is None or not 0.0 <= self.rate <= 1.0:
                raise ValidationError(f"layer {self.id!r}: dropout rate must be in [0, 1]")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValidationError(f"layer {self.id!r}: keep_fraction must be in (0, 1]")

    @property
    def width(self) -> int | None:
        """Divisible output width: out_features for fc, out_channels for conv."""
        if self.kind == "fully_connected":
            return self.out_features
        if self.kind == "convolution":
            return self.out_channels
        return None

    def with_width(self, width: int) -> "LayerSpec":
        if width < 1:
            raise ValidationError(f"layer {self.id!r}: width must be >= 1, got {width}")
        if self.kind == "fully_connected":
            return replace(self, out_features=width)
        if self.kind == "convolution":
            groups = self.groups
            if groups > 1 and width % groups:
                # grouped (e.g. depthwise) structure follows the narrowed width
                groups = math.gcd(width, groups)
            return replace(self, out_channels=width, groups=groups)
        raise ValidationError(f"layer {self.id!r} ({self.kind}) has no width")


@dataclass(frozen=True)
class ModelGraph:
    """A validated DAG of layers with exactly one input and one sink."""

    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    element_bits: int = 32

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError(f"model {self.name!r}: no layers")
        if self.element_bits not in (8, 16, 32):
            raise ValidationError(f"model {self.name!r}: element_bits must be 8, 16, or 32")
        ids = [l.id for l in self.layers]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ValidationError(f"model {self.name!r}: duplicate layer ids {sorted(dup)}")
        by_id = {l.id: l for l in self.layers}
        for layer in self.layers:
            for pred in layer.predecessors:
                if pred not in by_id:
                    raise ValidationError(
                        f"layer {layer.id!r}: unknown predecessor {pred!r}"
                    )
        inputs = [l for l in self.layers if l.kind == "input"]
        if len(inputs) != 1:
            raise ValidationError(f"model {self.name!r}: expected exactly 1 input layer, got {len(inputs)}")
        referenced = {p for l in self.layers for p in l.predecessors}
        sinks = [l for l in self.layers if l.id not in referenced]
        if len(sinks) != 1:
            raise ValidationError(
                f"model {self.name!r}: expected exactly 1 sink layer, got {[l.id for l in sinks]}"
            )
        topological_order(self)  # raises on cycles

    @property
    def input_layer(self) -> LayerSpec:
        return next(l for l in self.layers if l.kind == "input")

    @property
    def sink(self) -> LayerSpec:
        referenced = {p for l in self.layers for p in l.predecessors}
        return next(l for l in self.layers if l.id not in referenced)

    def layer(self, layer_id: str) -> LayerSpec:
        for l in self.layers:
            if l.id == layer_id:
                return l
        raise KeyError(layer_id)

    def weighted_layers(self) -> tuple[LayerSpec, ...]:
        order = topological_order(self)
        return tuple(l for l in order if l.kind in WEIGHTED_KINDS)


def topological_order(g: ModelGraph) -> tuple[LayerSpec, ...]:
    """Kahn topological sort; raises ValidationError naming a cycle."""
    by_id = {l.id: l for l in g.layers}
    indeg = {l.id: len(l.predecessors) for l in g.layers}
    succs: dict[str, list[str]] = {l.id: [] for l in g.layers}
    for layer in g.layers:
        for pred in layer.predecessors:
            succs[pred].append(layer.id)
    ready = [l.id for l in g.layers if indeg[l.id] == 0]
    order: list[LayerSpec] = []
    while ready:
        lid = ready.pop(0)
        order.append(by_id[lid])
        for nxt in succs[lid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(g.layers):
        cycle = sorted(lid for lid, d in indeg.items() if d > 0)
        raise ValidationError(f"model {g.name!r}: cycle among layers {cycle}")
    return tuple(order)


def _conv_spatial(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"derived dim {out} from in={size} kernel={kernel} stride={stride} padding={padding}"
        )
    return out


def infer_shapes(g: ModelGraph) -> dict[str, TensorShape]:
    """Output shape per layer id; conv/pool follow floor((in + 2p - k)/s) + 1."""
    shapes: dict[str, TensorShape] = {}
    eb = g.element_bits
    for layer in topological_order(g):
        preds = [shapes[p] for p in layer.predecessors]
        if layer.kind == "input":
            shape = TensorShape(tuple(g.input_shape), eb)
        elif layer.kind in ("fully_connected", "classifier_fc"):
            shape = TensorShape((layer.out_features,), eb)
        elif layer.kind == "convolution":
            (c, h, w) = preds[0].dims
            pad = layer.padding or (0, 0)
            oh = _conv_spatial(h, layer.kernel[0], layer.stride[0], pad[0])
            ow = _conv_spatial(w, layer.kernel[1], layer.stride[1], pad[1])
            shape = TensorShape((layer.out_channels, oh, ow), eb)
        elif layer.kind == "pooling":
            (c, h, w) = preds[0].dims
            oh = _conv_spatial(h, layer.window[0], layer.stride[0], 0)
            ow = _conv_spatial(w, layer.window[1], layer.stride[1], 0)
            shape = TensorShape((c, oh, ow), eb)
        elif layer.kind == "add":
            a, b = preds
            if a.dims != b.dims:
                raise ShapeError(f"add {layer.id!r}: mismatched shapes {a.dims} vs {b.dims}")
            shape = a
        elif layer.kind == "concat":
            ranks = {len(p.dims) for p in preds}
            if len(ranks) != 1:
                raise ShapeError(f"concat {layer.id!r}: mixed ranks {sorted(ranks)}")
            trailing = {p.dims[1:] for p in preds}
            if len(trailing) != 1:
                raise ShapeError(
                    f"concat {layer.id!r}: mismatched non-channel dims {sorted(trailing)}"
                )
            shape = TensorShape((sum(p.dims[0] for p in preds),) + preds[0].dims[1:], eb)
        else:  # normalization, dropout, activation pass shapes through
            shape = preds[0]
        shapes[layer.id] = shape
    return shapes


def layer_params(layer: LayerSpec, in_shape: TensorShape | None) -> int:
    """Weight + bias count; normalization counts scale+shift per channel."""
    if layer.kind in ("fully_connected", "classifier_fc"):
        base = in_shape.elements * layer.out_features + layer.out_features
    elif layer.kind == "convolution":
        kh, kw = layer.kernel
        in_channels = in_shape.dims[0]
        base = kh * kw * (in_channels // layer.groups) * layer.out_channels + layer.out_channels
    elif layer.kind == "normalization":
        base = 2 * in_shape.dims[0]
    else:
        return 0
    return int(round(base * layer.keep_fraction))


def layer_macs(layer: LayerSpec, in_shape: TensorShape | None, out_shape: TensorShape) -> int:
    """Multiply-accumulate count per inference; only fc/conv layers compute."""
    if layer.kind in ("fully_connected", "classifier_fc"):
        base = in_shape.elements * layer.out_features
    elif layer.kind == "convolution":
        kh, kw = layer.kernel
        in_channels = in_shape.dims[0]
        _, oh, ow = out_shape.dims
        base = oh * ow * layer.out_channels * (kh * kw * (in_channels // layer.groups))
    else:
        return 0
    return int(round(base * layer.keep_fraction))


@dataclass(frozen=True)
class LayerFootprint:
    layer_id: str
    params: int
    macs: int
    activation_bytes: int


@dataclass(frozen=True)
class FootprintReport:
    total_params: int
    total_macs: int
    per_layer: tuple[LayerFootprint, ...]
    model_bytes: int

    def __post_init__(self) -> None:
        assert self.total_params == sum(p.params for p in self.per_layer)
        assert self.total_macs == sum(p.macs for p in self.per_layer)


def total_footprint(g: ModelGraph, element_bits: int | None = None) -> FootprintReport:
    """Sum per-layer params/MACs; model_bytes at the given element width."""
    eb = g.element_bits if element_bits is None else element_bits
    shapes = infer_shapes(g)
    entries = []
    for layer in topological_order(g):
        in_shape = shapes[layer.predecessors[0]] if layer.predecessors else None
        entries.append(
            LayerFootprint(
                layer_id=layer.id,
                params=layer_params(layer, in_shape),
                macs=layer_macs(layer, in_shape, shapes[layer.id]),
                activation_bytes=shapes[layer.id].elements * eb // 8,
            )
        )
    total_params = sum(e.params for e in entries)
    total_macs = sum(e.macs for e in entries)
    return FootprintReport(
        total_params=total_params,
        total_macs=total_macs,
        per_layer=tuple(entries),
        model_bytes=total_params * eb // 8,
    )


def signature(layers: Iterator[LayerSpec] | Iterable[LayerSpec]) -> str:
    """Layer-count signature like '3fc-6c-4p-1n-2d' (zero kinds omitted)."""
    short = {
        "fully_connected": "fc",
        "classifier_fc": "fc",
        "convolution": "c",
        "pooling": "p",
        "normalization": "n",
        "dropout": "d",
    }
    counts: dict[str, int] = {"fc": 0, "c": 0, "p": 0, "n": 0, "d": 0}
    for layer in layers:
        tag = short.get(layer.kind)
        if tag:
            counts[tag] += 1
    return "-".join(f"{n}{tag}" for tag, n in counts.items() if n > 0)


# --- serialization -----------------------------------------------------------

_ATTR_FIELDS = {
    "fully_connected": ("out_features",),
    "classifier_fc": ("out_features",),
    "convolution": ("out_channels", "kernel", "stride", "padding", "groups"),
    "pooling": ("window", "stride", "mode"),
    "dropout": ("rate",),
}


def _layer_to_dict(layer: LayerSpec) -> dict[str, Any]:
    out: dict[str, Any] = {"id": layer.id, "kind": layer.kind}
    for name in _ATTR_FIELDS.get(layer.kind, ()):
        value = getattr(layer, name)
        if name == "groups" and value == 1:
            continue
        if name == "padding" and value in (None, (0, 0)):
            continue
        if isinstance(value, tuple):
            value = list(value)
        out[name] = value
    if layer.keep_fraction != 1.0:
        out["keep_fraction"] = layer.keep_fraction
    if layer.branch is not None:
        out["branch"] = layer.branch
    out["predecessors"] = list(layer.predecessors)
    return out


def layer_from_dict(entry: dict[str, Any]) -> LayerSpec:
    if "id" not in entry or "kind" not in entry:
        raise ParseError(f"layer entry missing id/kind: {entry}")
    lid, kind = entry["id"], entry["kind"]
    known = {
        "id",
        "kind",
        "predecessors",
        "branch",
        "keep_fraction",
        *_ATTR_FIELDS.get(kind, ()),
    }
    extra = set(entry) - known
    if extra:
        raise ParseError(f"layer {lid!r}: unexpected fields {sorted(extra)}")
    kwargs: dict[str, Any] = {
        "id": lid,
        "kind": kind,
        "predecessors": tuple(entry.get("predecessors", ())),
        "branch": entry.get("branch"),
        "keep_fraction": entry.get("keep_fraction", 1.0),
    }
    try:
        for name in _ATTR_FIELDS.get(kind, ()):
            if name in entry:
                value = entry[name]
                if name in ("kernel", "stride", "padding", "window"):
                    value = _pair(value)
                kwargs[name] = value
        if kind == "convolution" and "padding" not in entry:
            kwargs["padding"] = (0, 0)
        return LayerSpec(**kwargs)
    except (ValidationError, TypeError, IndexError) as exc:
        raise ParseError(f"layer {lid!r}: {exc}") from exc


def serialize_model(g: ModelGraph) -> dict[str, Any]:
    return {
        "name": g.name,
        "input_shape": list(g.input_shape),
        "element_bits": g.element_bits,
        "layers": [_layer_to_dict(l) for l in g.layers],
    }


def parse_model(document: str | dict[str, Any]) -> ModelGraph:
    """Parse and validate a model document (JSON text or mapping)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ParseError(f"expected a mapping at top level, got {type(document).__name__}")
    for required in ("name", "input_shape", "layers"):
        if required not in document:
            raise ParseError(f"model document missing field {required!r}")
    layers = tuple(layer_from_dict(e) for e in document["layers"])
    return ModelGraph(
        name=document["name"],
        input_shape=tuple(int(d) for d in document["input_shape"]),
        layers=layers,
        element_bits=int(document.get("element_bits", 32)),
    )


def load_model(path: str) -> ModelGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
