"""Overflow reporting: metric tables, value histograms, a portable binary
heatmap, and matplotlib figures rendered to files."""

import os

import numpy as np

from .errors import ConfigError
from .router import CongestionMap, overflow_metrics

HIST_BINS = 10


def ppm_heatmap(of_map: np.ndarray) -> bytes:
    """Binary P6 image, one pixel per grid bin.

    Red intensity is proportional to overflow (255 at the map maximum);
    a map without overflow renders all black. Rows are emitted top-down
    with the highest-j bin row first, so y grows upward in the image.
    """
    of = np.asarray(of_map, dtype=float)
    if of.ndim != 2:
        raise ConfigError("heatmap expects a 2-d overflow map")
    n, m = of.shape
    peak = float(of.max()) if of.size else 0.0
    if peak > 0.0:
        red = np.rint(255.0 * of / peak).astype(np.uint8)
    else:
        red = np.zeros((n, m), dtype=np.uint8)
    img = np.zeros((m, n, 3), dtype=np.uint8)
    img[:, :, 0] = red.T[::-1, :]
    header = f"P6\n{n} {m}\n255\n".encode()
    return header + img.tobytes()


def of_histogram(of_map: np.ndarray, bins: int = HIST_BINS):
    """Equal-width bins from zero to the map maximum; a flat all-zero map
    collapses to a single [0, 0] bin holding everything."""
    of = np.asarray(of_map, dtype=float).ravel()
    peak = float(of.max()) if of.size else 0.0
    if peak <= 0.0:
        return [(0.0, 0.0, int(of.size))]
    edges = np.linspace(0.0, peak, bins + 1)
    counts, _ = np.histogram(of, bins=edges)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(bins)]


def _metric_rows(reports: dict) -> list:
    names = list(reports)
    rows = []
    for metric in ("tof", "mof", "h_cr", "v_cr"):
        values = [getattr(reports[name], metric) for name in names]
        rows.append((metric, values))
    return rows


def report_text(maps: dict, bins: int = HIST_BINS) -> str:
    """Delimited text report: per-map metric columns (plus a difference
    column for a pair) and one histogram block per map."""
    if not maps:
        raise ConfigError("report needs at least one congestion map")
    shapes = {cmap.shape for cmap in maps.values()}
    if len(shapes) > 1:
        raise ConfigError(f"map dimensions differ: {sorted(shapes)}")
    reports = {name: overflow_metrics(cmap) for name, cmap in maps.items()}
    names = list(maps)
    out = ["# overflow report"]
    n, m = next(iter(shapes))
    out.append(f"grid {n} {m}")
    header = ["metric"] + names
    if len(names) == 2:
        header.append("diff")
    out.append("\t".join(header))
    for metric, values in _metric_rows(reports):
        row = [metric] + [repr(v) for v in values]
        if len(values) == 2:
            row.append(repr(values[1] - values[0]))
        out.append("\t".join(row))
    for name in names:
        out.append(f"histogram {name}")
        out.append("lo\thi\tcount")
        for lo, hi, count in of_histogram(reports[name].of_map, bins):
            out.append(f"{lo!r}\t{hi!r}\t{count}")
    return "\n".join(out) + "\n"


def parse_trace_csv(text: str) -> dict:
    """Columns of a placement trace file as float arrays keyed by name."""
    lines = [ln for ln in text.strip().split("\n") if ln]
    if not lines:
        raise ConfigError("empty trace file")
    cols = lines[0].split(",")
    data = {c: [] for c in cols}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise ConfigError(f"trace row has {len(parts)} fields, header has {len(cols)}")
        for c, p in zip(cols, parts):
            try:
                data[c].append(float(p))
            except ValueError as exc:
                raise ConfigError(f"trace column {c}: bad number {p!r}") from exc
    return {c: np.array(v) for c, v in data.items()}


def render_figures(outdir: str, maps: dict, trace: dict | None = None) -> list:
    """Matplotlib renderings of the heatmaps, the overflow histogram, and
    the optional optimization trace. Returns the files written."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    no_stamp = {"Software": None}  # keep bytes stable across runs
    for name, cmap in maps.items():
        rep = overflow_metrics(cmap)
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(rep.of_map.T, origin="lower", cmap="Reds", aspect="auto")
        fig.colorbar(im, ax=ax, label="overflow")
        ax.set_xlabel("grid column")
        ax.set_ylabel("grid row")
        ax.set_title(f"overflow: {name}")
        path = os.path.join(outdir, f"heatmap_{name}.png")
        fig.savefig(path, dpi=110, metadata=no_stamp)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(5, 4))
    width_scale = 0.8 / max(len(maps), 1)
    for k, (name, cmap) in enumerate(maps.items()):
        hist = of_histogram(overflow_metrics(cmap).of_map)
        centers = np.array([0.5 * (lo + hi) for lo, hi, _ in hist])
        counts = [c for _, _, c in hist]
        span = hist[-1][1] - hist[0][0]
        width = width_scale * (span / len(hist) if span > 0 else 1.0)
        ax.bar(centers + k * width, counts, width=width, label=name)
    ax.set_xlabel("overflow value")
    ax.set_ylabel("grid count")
    ax.set_yscale("log")
    ax.legend()
    path = os.path.join(outdir, "histogram.png")
    fig.savefig(path, dpi=110, metadata=no_stamp)
    plt.close(fig)
    written.append(path)

    if trace is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(trace["iter"], trace["hpwl"], color="tab:blue", label="hpwl")
        ax.set_xlabel("iteration")
        ax.set_ylabel("hpwl", color="tab:blue")
        ax2 = ax.twinx()
        ax2.plot(trace["iter"], trace["eo"], color="tab:red", label="eo")
        ax2.set_ylabel("electric overflow", color="tab:red")
        path = os.path.join(outdir, "trace.png")
        fig.savefig(path, dpi=110, metadata=no_stamp)
        plt.close(fig)
        written.append(path)
    return written
