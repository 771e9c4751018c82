"""Command-line entry point.

Subcommands: gen, route, collect, train, predict, eval, place, report.
Exit codes: 0 success, 1 usage error, 2 domain error. Logging level comes
from ROUTEPLACE_LOG (error, info or debug). Every output is written
atomically and accompanied by a run manifest.
"""

import argparse
import dataclasses
import logging
import os
import sys
import time

import numpy as np

from .errors import ConfigError, RouteplaceError
from .gnn import CongestionModel, grid_map_from_cells, load_checkpoint, predict_cells, save_checkpoint
from .graph import build_routegraph
from .manifest import build_manifest, sha256_file, write_atomic, write_manifest
from .netlist import (
    LayoutRegion,
    RoutingGrid,
    SyntheticSpec,
    generate_synthetic,
    parse_netlist,
    read_placement,
    write_netlist,
    write_placement,
)
from .placer import InflationConfig, PlacerConfig, place_any, trace_to_csv
from .report import parse_trace_csv, ppm_heatmap, render_figures, report_text
from .router import overflow_metrics, read_congestion_map, route, write_congestion_map
from .train import TrainConfig, collect_snapshots, eval_stats, load_datasets, train, write_dataset

log = logging.getLogger("routeplace")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("ROUTEPLACE_LOG", "error")
    if name not in _LOG_LEVELS:
        raise ConfigError(
            f"ROUTEPLACE_LOG must be one of {sorted(_LOG_LEVELS)}, got {name!r}"
        )
    logging.basicConfig(
        level=_LOG_LEVELS[name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


# --------------------------------------------------------------------------
# key = value configuration files


def _parse_kv(text: str, label: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{label}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, kind, key: str, label: str):
    try:
        if kind is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"{label}: bad value for {key}: {value!r}") from exc


_PLACER_KEYS = {
    "seed": int,
    "max_iters": int,
    "stop_eo": float,
    "target_density": float,
    "eta": float,
    "lambda_d": float,
    "gamma": float,
    "eta_start_eo": float,
}
_OPTIONAL_NONE = {"lambda_d", "gamma", "eta_start_eo"}


def _placer_config_from(path: str | None) -> PlacerConfig:
    cfg = PlacerConfig()
    if path is None:
        return cfg
    kv = _parse_kv(_read_text(path), path)
    for key, value in kv.items():
        if key not in _PLACER_KEYS:
            raise ConfigError(f"{path}: unknown placer config key {key!r}")
        if key in _OPTIONAL_NONE and value.lower() == "none":
            cfg = dataclasses.replace(cfg, **{key: None})
        else:
            cfg = dataclasses.replace(cfg, **{key: _coerce(value, _PLACER_KEYS[key], key, path)})
    return cfg


_TRAIN_KEYS = {
    "lr": float,
    "lr_decay": float,
    "weight_decay": float,
    "epochs": int,
    "seed": int,
    "val_fraction": float,
}


def _train_config_from(path: str | None) -> TrainConfig:
    cfg = TrainConfig()
    if path is None:
        return cfg
    kv = _parse_kv(_read_text(path), path)
    for key, value in kv.items():
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"{path}: unknown train config key {key!r}")
        cfg = dataclasses.replace(cfg, **{key: _coerce(value, _TRAIN_KEYS[key], key, path)})
    return cfg


_SPEC_SCALAR_KEYS = {
    "cell_count": int,
    "net_count": int,
    "pins_min": int,
    "pins_max": int,
    "degree_power": float,
    "fixed_fraction": float,
    "cell_w_min": float,
    "cell_w_max": float,
    "cell_h_min": float,
    "cell_h_max": float,
    "connected": bool,
    "seed": int,
}


def _spec_from(path: str, seed: int) -> SyntheticSpec:
    kv = _parse_kv(_read_text(path), path)
    spec = SyntheticSpec()
    for key, value in kv.items():
        if key == "region":
            parts = value.split()
            if len(parts) != 4:
                raise ConfigError(f"{path}: region wants 'x0 y0 x1 y1'")
            spec = dataclasses.replace(spec, region=LayoutRegion(*map(float, parts)))
        elif key == "grid":
            parts = value.split()
            if len(parts) != 4:
                raise ConfigError(f"{path}: grid wants 'n m cap_h cap_v'")
            spec = dataclasses.replace(
                spec, grid=RoutingGrid(int(parts[0]), int(parts[1]),
                                       float(parts[2]), float(parts[3])))
        elif key in _SPEC_SCALAR_KEYS:
            spec = dataclasses.replace(
                spec, **{key: _coerce(value, _SPEC_SCALAR_KEYS[key], key, path)})
        else:
            raise ConfigError(f"{path}: unknown spec key {key!r}")
    return dataclasses.replace(spec, seed=seed)  # the flag wins


def _config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _finish(subcommand, config, seed, inputs, outputs, t0) -> None:
    manifest = build_manifest(
        subcommand, config, seed, inputs, outputs, time.perf_counter() - t0
    )
    write_manifest(manifest, outputs)


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    spec = _spec_from(args.spec, args.seed)
    netlist = generate_synthetic(spec)
    write_atomic(args.output, write_netlist(netlist))
    log.info("generated %d cells, %d nets -> %s", netlist.num_cells, netlist.num_nets, args.output)
    _finish("gen", _config_dict(spec), args.seed, {"spec": args.spec}, [args.output], t0)
    return 0


def cmd_route(args) -> int:
    t0 = time.perf_counter()
    netlist = parse_netlist(_read_text(args.netlist))
    placement = read_placement(_read_text(args.placement), netlist.num_cells)
    cmap = route(netlist, placement)
    if cmap.skipped_nets:
        log.info("skipped %d nets with fewer than 2 pins", cmap.skipped_nets)
    write_atomic(args.output, write_congestion_map(cmap))
    outputs = [args.output]
    if args.report:
        rep = overflow_metrics(cmap)
        text = "".join(
            f"{k} {getattr(rep, k)!r}\n" for k in ("tof", "mof", "h_cr", "v_cr")
        )
        write_atomic(args.report, text)
        outputs.append(args.report)
    log.info("routed %d nets, tof %.3f", netlist.num_nets, overflow_metrics(cmap).tof)
    _finish("route", {}, None,
            {"netlist": args.netlist, "placement": args.placement}, outputs, t0)
    return 0


def cmd_collect(args) -> int:
    t0 = time.perf_counter()
    netlist = parse_netlist(_read_text(args.netlist))
    cfg = dataclasses.replace(_placer_config_from(args.config), seed=args.seed)
    netlist_id = os.path.basename(os.path.normpath(args.output))
    snaps = collect_snapshots(netlist, cfg, netlist_id=netlist_id)
    write_dataset(args.output, netlist, snaps)
    log.info("collected %d snapshots -> %s", len(snaps), args.output)
    inputs = {"netlist": args.netlist}
    if args.config:
        inputs["config"] = args.config
    outputs = [os.path.join(args.output, name) for name in ("meta.txt", "netlist.nl")]
    _finish("collect", _config_dict(cfg), args.seed, inputs, outputs, t0)
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    dataset = load_datasets(args.data)
    cfg = _train_config_from(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    model, history = train(dataset, cfg)
    write_atomic(args.output, save_checkpoint(model.params, model.norm))
    last = history[-1]
    log.info("trained %d epochs on %d snapshots; final train loss %.6f",
             len(history), len(dataset), last.train_loss)
    inputs = _dataset_inputs(args.data)
    if args.config:
        inputs["config"] = args.config
    _finish("train", _config_dict(cfg), cfg.seed, inputs, [args.output], t0)
    return 0


def _dataset_inputs(root: str) -> dict:
    """Hashable input files of one dataset directory or a directory of
    them: every netlist.nl and meta.txt, keyed by relative path."""
    inputs = {}
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            if name in ("netlist.nl", "meta.txt"):
                full = os.path.join(dirpath, name)
                inputs[os.path.relpath(full, root)] = full
    return dict(sorted(inputs.items()))


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    with open(args.model, "rb") as f:
        params, norm = load_checkpoint(f.read())
    model = CongestionModel(params=params, norm=norm)
    netlist = parse_netlist(_read_text(args.netlist))
    placement = read_placement(_read_text(args.placement), netlist.num_cells)
    y, _ = predict_cells(model, netlist, placement)
    write_atomic(args.output, "".join(repr(float(v)) + "\n" for v in y))
    log.info("predicted %d cells -> %s", len(y), args.output)
    _finish("predict", {}, None,
            {"model": args.model, "netlist": args.netlist, "placement": args.placement},
            [args.output], t0)
    return 0


def _read_values(path: str) -> np.ndarray:
    tokens = _read_text(path).split()
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise ConfigError(f"{path}: expected one number per line") from exc


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    pred = _read_values(args.pred)
    labels = _read_values(args.labels)
    grid_pred = grid_true = None
    inputs = {"pred": args.pred, "labels": args.labels}
    if (args.netlist is None) != (args.placement is None):
        raise ConfigError("--netlist and --placement must be given together")
    if args.netlist is not None:
        netlist = parse_netlist(_read_text(args.netlist))
        placement = read_placement(_read_text(args.placement), netlist.num_cells)
        graph = build_routegraph(netlist, placement)
        n, m = netlist.grid.n, netlist.grid.m
        grid_pred = grid_map_from_cells(pred, graph.grid_cell_bin, n, m)
        grid_true = grid_map_from_cells(labels, graph.grid_cell_bin, n, m)
        inputs["netlist"] = args.netlist
        inputs["placement"] = args.placement
    stats = eval_stats(pred, labels, grid_pred, grid_true)
    lines = []
    for key in ("nrmse", "nrmse_degenerate", "pearson", "spearman", "kendall", "ssim"):
        value = stats[key]
        lines.append(f"{key} {'n/a' if value is None else repr(value)}\n")
    write_atomic(args.report, "".join(lines))
    log.info("eval -> %s", args.report)
    _finish("eval", {}, None, inputs, [args.report], t0)
    return 0


def cmd_place(args) -> int:
    t0 = time.perf_counter()
    netlist = parse_netlist(_read_text(args.netlist))
    cfg = dataclasses.replace(_placer_config_from(args.config), seed=args.seed)
    if args.eta is not None:
        cfg = dataclasses.replace(cfg, eta=args.eta)
    inflation = InflationConfig(
        enabled=args.inflate,
        exponent=args.exponent,
        num_adjust=args.num_adjust,
        feedback=args.feedback,
    )
    cfg = dataclasses.replace(cfg, inflation=inflation)
    model = None
    inputs = {"netlist": args.netlist}
    if args.model is not None:
        with open(args.model, "rb") as f:
            params, norm = load_checkpoint(f.read())
        model = CongestionModel(params=params, norm=norm)
        inputs["model"] = args.model
    if args.config:
        inputs["config"] = args.config
    placement, trace = place_any(netlist, cfg, model)
    write_atomic(args.output, write_placement(placement))
    outputs = [args.output]
    if args.trace:
        write_atomic(args.trace, trace_to_csv(trace))
        outputs.append(args.trace)
    log.info("placed %d cells in %d iterations, final eo %.4f",
             netlist.num_cells, trace[-1].iter, trace[-1].eo)
    _finish("place", _config_dict(cfg), args.seed, inputs, outputs, t0)
    return 0


def cmd_report(args) -> int:
    t0 = time.perf_counter()
    maps = {"map": read_congestion_map(_read_text(args.map))}
    inputs = {"map": args.map}
    if args.baseline:
        maps = {"baseline": read_congestion_map(_read_text(args.baseline)), **maps}
        inputs["baseline"] = args.baseline
    trace = None
    if args.trace:
        trace = parse_trace_csv(_read_text(args.trace))
        inputs["trace"] = args.trace
    os.makedirs(args.output, exist_ok=True)
    outputs = []
    text_path = os.path.join(args.output, "report.txt")
    write_atomic(text_path, report_text(maps))
    outputs.append(text_path)
    for name, cmap in maps.items():
        path = os.path.join(args.output, f"heatmap_{name}.ppm")
        write_atomic(path, ppm_heatmap(overflow_metrics(cmap).of_map))
        outputs.append(path)
    outputs.extend(render_figures(args.output, maps, trace))
    log.info("report -> %s", args.output)
    _finish("report", {}, None, inputs, outputs, t0)
    return 0


# --------------------------------------------------------------------------
# Parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routeplace",
        description="Routability-aware analytical global placement toolkit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen", help="generate a synthetic netlist")
    p.add_argument("--spec", required=True, help="key = value generator spec file")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("-o", "--output", required=True, help="netlist file to write")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("route", help="route a placement and emit the usage map")
    p.add_argument("--netlist", required=True)
    p.add_argument("--placement", required=True)
    p.add_argument("-o", "--output", required=True, help="congestion map file")
    p.add_argument("--report", help="overflow metric summary file")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("collect", help="collect routed training snapshots")
    p.add_argument("--netlist", required=True)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--config", help="placer key = value config file")
    p.add_argument("-o", "--output", required=True, help="dataset directory")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train the congestion predictor")
    p.add_argument("--data", required=True, help="dataset directory (or directory of them)")
    p.add_argument("--config", help="train key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("-o", "--output", required=True, help="checkpoint file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-cell congestion predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--netlist", required=True)
    p.add_argument("--placement", required=True)
    p.add_argument("-o", "--output", required=True, help="one prediction per line")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="prediction quality statistics")
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--report", required=True, help="stats file to write")
    p.add_argument("--netlist", help="with --placement: adds grid-level similarity")
    p.add_argument("--placement")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("place", help="run the analytical placer")
    p.add_argument("--netlist", required=True)
    p.add_argument("--model", help="congestion model checkpoint")
    p.add_argument("--eta", type=float, help="congestion penalty weight")
    p.add_argument("--inflate", action="store_true", help="enable congestion-driven inflation")
    p.add_argument("--exponent", type=float, default=1.5)
    p.add_argument("--num-adjust", type=int, default=1)
    p.add_argument("--feedback", choices=("router", "gnn"), default="router")
    p.add_argument("--config", help="placer key = value config file")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("-o", "--output", required=True, help="placement file")
    p.add_argument("--trace", help="iteration trace CSV")
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("report", help="render overflow reports and figures")
    p.add_argument("--map", required=True, help="congestion map file")
    p.add_argument("--baseline", help="second map for side-by-side comparison")
    p.add_argument("--trace", help="placement trace CSV")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage problems; fold the
        # latter onto the documented usage-error code
        return 0 if exc.code == 0 else 1
    try:
        _setup_logging()
        return args.func(args)
    except RouteplaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
