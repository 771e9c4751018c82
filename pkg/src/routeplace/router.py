"""Deterministic grid global router and overflow metrics.

Stands in for an external global router: nets are decomposed into two-pin
segments by a minimum spanning tree over their pin grid locations, and each
segment is routed as an L-shape whose corner is chosen by current summed
overflow. Usage counts boundary crossings: a horizontal run from column a
to column b>a increments usage_h at columns a..b-1 (the crossing between
i and i+1 is attributed to i), and vertically alike.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError
from .netlist import GridGeometry, Netlist, Placement

log = logging.getLogger(__name__)


@dataclass
class CongestionMap:
    usage_h: np.ndarray  # (n, m), wires crossing between column i and i+1 at row j
    usage_v: np.ndarray  # (n, m), wires crossing between row j and j+1 at column i
    cap_h: float
    cap_v: float
    skipped_nets: int = 0  # nets with < 2 pins, tolerated with a warning

    @property
    def shape(self):
        return self.usage_h.shape


@dataclass
class OverflowReport:
    tof: float
    mof: float
    h_cr: float
    v_cr: float
    of_map: np.ndarray


def pin_positions(netlist: Netlist, placement: Placement) -> tuple[np.ndarray, np.ndarray]:
    """Absolute pin coordinates: owning cell origin plus pin offset."""
    arr = netlist.arrays()
    px = placement.x[arr.pin_cell] + arr.pin_dx
    py = placement.y[arr.pin_cell] + arr.pin_dy
    return px, py


def _mst_edges(points: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Prim MST over grid points under Manhattan distance.

    Deterministic: grown from point 0; candidate edges compared by
    (distance, tree point index, outside point index), all ascending.
    Returns edges in acceptance order.
    """
    k = len(points)
    in_tree = [False] * k
    in_tree[0] = True
    # best[v] = (dist, tree_index) for the cheapest connection of v to the tree
    best = {}
    for v in range(1, k):
        d = abs(points[v][0] - points[0][0]) + abs(points[v][1] - points[0][1])
        best[v] = (d, 0)
    edges = []
    for _ in range(k - 1):
        v = min(best, key=lambda u: (best[u][0], best[u][1], u))
        d, t = best.pop(v)
        edges.append((t, v))
        in_tree[v] = True
        for u in best:
            d = abs(points[u][0] - points[v][0]) + abs(points[u][1] - points[v][1])
            if (d, v) < best[u]:
                best[u] = (d, v)
    return edges


def _h_run_cost(usage_h, cap_h, row, c0, c1):
    if c0 == c1:
        return 0.0
    lo, hi = min(c0, c1), max(c0, c1)
    seg = usage_h[lo:hi, row]
    return float(np.maximum(0.0, seg - cap_h).sum())


def _v_run_cost(usage_v, cap_v, col, r0, r1):
    if r0 == r1:
        return 0.0
    lo, hi = min(r0, r1), max(r0, r1)
    seg = usage_v[col, lo:hi]
    return float(np.maximum(0.0, seg - cap_v).sum())


def _commit_h(usage_h, row, c0, c1):
    if c0 != c1:
        lo, hi = min(c0, c1), max(c0, c1)
        usage_h[lo:hi, row] += 1.0


def _commit_v(usage_v, col, r0, r1):
    if r0 != r1:
        lo, hi = min(r0, r1), max(r0, r1)
        usage_v[col, lo:hi] += 1.0


def route(netlist: Netlist, placement: Placement) -> CongestionMap:
    """Route every net; returns per-grid horizontal/vertical wire usage.

    Nets are processed in net-id order, MST segments in acceptance order,
    so the result is deterministic. A pin strictly outside the layout
    region is an error (positions on the upper boundary fall into the last
    column/row). Nets with fewer than two pins are skipped and counted.
    """
    geom = GridGeometry(netlist.region, netlist.grid)
    arr = netlist.arrays()
    px, py = pin_positions(netlist, placement)
    reg = netlist.region
    bad = (px < reg.x0) | (px > reg.x1) | (py < reg.y0) | (py > reg.y1)
    bad |= ~np.isfinite(px) | ~np.isfinite(py)
    if bad.any():
        k = int(np.argmax(bad))
        raise InvariantError(
            f"pin {k} of net {arr.pin_net[k]} at ({px[k]}, {py[k]}) "
            "lies outside the layout region"
        )
    bx = geom.bin_x(px)
    by = geom.bin_y(py)

    usage_h = np.zeros((geom.n, geom.m))
    usage_v = np.zeros((geom.n, geom.m))
    skipped = 0
    for net in netlist.nets:
        if len(net.pin_indices) < 2:
            skipped += 1
            continue
        pts: list[tuple[int, int]] = []
        seen = set()
        for k in net.pin_indices:
            pt = (int(bx[k]), int(by[k]))
            if pt not in seen:
                seen.add(pt)
                pts.append(pt)
        if len(pts) < 2:
            continue
        for a, b in _mst_edges(pts):
            (i1, j1), (i2, j2) = pts[a], pts[b]
            if i1 == i2:
                _commit_v(usage_v, i1, j1, j2)
            elif j1 == j2:
                _commit_h(usage_h, j1, i1, i2)
            else:
                # two L corners: horizontal-first (corner at (i2, j1)) vs
                # vertical-first (corner at (i1, j2)); tie goes horizontal
                h_cost = _h_run_cost(usage_h, netlist.grid.cap_h, j1, i1, i2) + _v_run_cost(
                    usage_v, netlist.grid.cap_v, i2, j1, j2
                )
                v_cost = _v_run_cost(usage_v, netlist.grid.cap_v, i1, j1, j2) + _h_run_cost(
                    usage_h, netlist.grid.cap_h, j2, i1, i2
                )
                if h_cost <= v_cost:
                    _commit_h(usage_h, j1, i1, i2)
                    _commit_v(usage_v, i2, j1, j2)
                else:
                    _commit_v(usage_v, i1, j1, j2)
                    _commit_h(usage_h, j2, i1, i2)
    if skipped:
        log.warning("skipped %d nets with fewer than 2 pins", skipped)
    return CongestionMap(usage_h, usage_v, netlist.grid.cap_h, netlist.grid.cap_v, skipped)


def overflow_metrics(cmap: CongestionMap) -> OverflowReport:
    """TOF/MOF and directional congestion ratios from a usage map."""
    of_h = np.maximum(0.0, cmap.usage_h - cmap.cap_h)
    of_v = np.maximum(0.0, cmap.usage_v - cmap.cap_v)
    of = of_h + of_v
    return OverflowReport(
        tof=float(of.sum()),
        mof=float(of.max()),
        h_cr=float(of_h.max() / cmap.cap_h),
        v_cr=float(of_v.max() / cmap.cap_v),
        of_map=of,
    )


def _cell_bin_ranges(geom: GridGeometry, x, y, w, h):
    """Inclusive bin index ranges covered with positive area by each cell.

    A cell edge exactly on a bin boundary does not claim the neighboring
    bin (zero-area touch excluded).
    """
    i_lo = np.clip(np.floor((x - geom.region.x0) / geom.pitch_x), 0, geom.n - 1).astype(np.intp)
    i_hi = np.clip(
        np.ceil((x + w - geom.region.x0) / geom.pitch_x) - 1, 0, geom.n - 1
    ).astype(np.intp)
    j_lo = np.clip(np.floor((y - geom.region.y0) / geom.pitch_y), 0, geom.m - 1).astype(np.intp)
    j_hi = np.clip(
        np.ceil((y + h - geom.region.y0) / geom.pitch_y) - 1, 0, geom.m - 1
    ).astype(np.intp)
    return i_lo, np.maximum(i_lo, i_hi), j_lo, np.maximum(j_lo, j_hi)


def cell_labels(netlist: Netlist, placement: Placement, cmap: CongestionMap) -> np.ndarray:
    """Per-cell congestion label: max overflow over grids the cell overlaps."""
    geom = GridGeometry(netlist.region, netlist.grid)
    arr = netlist.arrays()
    of = overflow_metrics(cmap).of_map
    i_lo, i_hi, j_lo, j_hi = _cell_bin_ranges(
        geom, placement.x, placement.y, arr.cell_w, arr.cell_h
    )
    labels = np.empty(netlist.num_cells)
    for v in range(netlist.num_cells):
        labels[v] = of[i_lo[v] : i_hi[v] + 1, j_lo[v] : j_hi[v] + 1].max()
    return labels


def rasterize_cells(geom: GridGeometry, x, y, w, h) -> np.ndarray:
    """Exact rectangle-overlap area of each cell accumulated per grid bin."""
    n, m = geom.n, geom.m
    area = np.zeros((n, m))
    if len(x) == 0:
        return area
    i_lo, i_hi, j_lo, j_hi = _cell_bin_ranges(geom, x, y, w, h)
    span_x = int((i_hi - i_lo).max()) + 1
    span_y = int((j_hi - j_lo).max()) + 1
    x1, y1 = x + w, y + h
    for dx in range(span_x):
        i = i_lo + dx
        live_x = i <= i_hi
        i = np.minimum(i, i_hi)
        ox = np.minimum(x1, geom.edges_x[i + 1]) - np.maximum(x, geom.edges_x[i])
        ox = np.where(live_x, np.maximum(ox, 0.0), 0.0)
        for dy in range(span_y):
            j = j_lo + dy
            live_y = j <= j_hi
            j = np.minimum(j, j_hi)
            oy = np.minimum(y1, geom.edges_y[j + 1]) - np.maximum(y, geom.edges_y[j])
            oy = np.where(live_y, np.maximum(oy, 0.0), 0.0)
            np.add.at(area, (i, j), ox * oy)
    return area


def electric_overflow(
    netlist: Netlist, placement: Placement, target_density: float = 1.0
) -> float:
    """Density-violation measure: overloaded movable area over total movable area."""
    arr = netlist.arrays()
    mask = arr.movable_mask
    if not mask.any():
        return 0.0
    geom = GridGeometry(netlist.region, netlist.grid)
    area = rasterize_cells(
        geom, placement.x[mask], placement.y[mask], arr.cell_w[mask], arr.cell_h[mask]
    )
    over = np.maximum(0.0, area - target_density * geom.bin_area).sum()
    return float(over / (arr.cell_w[mask] * arr.cell_h[mask]).sum())


# --------------------------------------------------------------------------
# CongestionMap file format


def write_congestion_map(cmap: CongestionMap) -> str:
    n, m = cmap.usage_h.shape
    lines = [f"congmap {n} {m} {repr(float(cmap.cap_h))} {repr(float(cmap.cap_v))}"]
    for i in range(n):
        for j in range(m):
            lines.append(
                f"{i} {j} {repr(float(cmap.usage_h[i, j]))} {repr(float(cmap.usage_v[i, j]))}"
            )
    return "\n".join(lines) + "\n"


def read_congestion_map(text: str) -> CongestionMap:
    from .errors import ParseError

    lines = [
        ln.split("#", 1)[0].strip()
        for ln in text.splitlines()
    ]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("congmap"):
        raise ParseError("congestion map must start with a congmap header")
    tok = lines[0].split()
    if len(tok) != 5:
        raise ParseError("congmap header needs 4 values")
    n, m = int(tok[1]), int(tok[2])
    cap_h, cap_v = float(tok[3]), float(tok[4])
    usage_h = np.zeros((n, m))
    usage_v = np.zeros((n, m))
    if len(lines) - 1 != n * m:
        raise ParseError(f"expected {n * m} usage lines, got {len(lines) - 1}")
    for ln in lines[1:]:
        tok = ln.split()
        if len(tok) != 4:
            raise ParseError(f"bad usage line: {ln!r}")
        i, j = int(tok[0]), int(tok[1])
        if not (0 <= i < n and 0 <= j < m):
            raise ParseError(f"usage index ({i}, {j}) out of range")
        usage_h[i, j] = float(tok[2])
        usage_v[i, j] = float(tok[3])
    return CongestionMap(usage_h, usage_v, cap_h, cap_v)
