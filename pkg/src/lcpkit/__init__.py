"""Toolkit for branch-split DNN models: splitting, distribution analytics,
edge inference simulation, and a systolic-accelerator latency model."""

from .accel import AccelConfig, QuantPruneSpec, apply_quant_prune, model_latency, peak_throughput
from .analytics import CommReport, Strategy, communication_load, compare_strategies, per_device_footprint
from .errors import InfeasibleError, LcpError, OverSplitError, ParseError, ShapeError, ValidationError
from .graph import (
    FootprintReport,
    LayerSpec,
    ModelGraph,
    TensorShape,
    infer_shapes,
    layer_macs,
    layer_params,
    load_model,
    parse_model,
    serialize_model,
    total_footprint,
)
from .simulator import (
    Jitter,
    NetworkSpec,
    Placement,
    SimResult,
    calibrate_efficiency,
    default_placement,
    energy,
    latency_histogram,
    simulate,
    speedup,
)
from .splitter import (
    AccuracyTable,
    DeviceSpec,
    SplitConfig,
    SplitModel,
    design_loop,
    fatten,
    identity_split,
    remove_non_branch_connections,
    split,
    split_to_branches,
)

__version__ = "0.1.0"
