"""Routability-aware analytical global placement.

A wirelength/density placer with a learned per-cell congestion penalty:
a grid router supplies overflow labels, a small graph network predicts
congestion from netlist structure and placement geometry, and the frozen
network's gradient steers cells away from hotspots during optimization.
"""

__version__ = "0.1.0"

from .errors import (
    ChecksumError,
    ConfigError,
    DanglingReferenceError,
    DivergenceError,
    InfeasibleSpecError,
    InvariantError,
    ParseError,
    RouteplaceError,
    StaleActivationsError,
)
from .netlist import (
    Cell,
    GridGeometry,
    LayoutRegion,
    Net,
    Netlist,
    Pin,
    Placement,
    RoutingGrid,
    SyntheticSpec,
    generate_synthetic,
    parse_netlist,
    read_placement,
    write_netlist,
    write_placement,
)
from .router import (
    CongestionMap,
    cell_labels,
    electric_overflow,
    overflow_metrics,
    read_congestion_map,
    route,
    write_congestion_map,
)
from .features import compute_rudy, geom_features, geom_jacobian
from .graph import RawFeatures, RouteGraph, build_features, build_routegraph, refresh_grid_edges
from .gnn import (
    CongestionModel,
    GnnParams,
    Normalizer,
    congestion_penalty,
    grid_map_from_cells,
    init_params,
    load_checkpoint,
    predict_cells,
    save_checkpoint,
)
from .placer import (
    InflationConfig,
    PlacerConfig,
    TraceRow,
    density,
    gamma_schedule,
    hpwl,
    inflate_and_replace,
    lambda_update,
    place,
    place_any,
    trace_to_csv,
    wirelength,
)
from .train import (
    Snapshot,
    TrainConfig,
    collect_snapshots,
    dataset_loss,
    eval_stats,
    load_datasets,
    read_dataset,
    ssim,
    train,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
