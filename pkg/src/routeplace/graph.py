"""Heterogeneous placement graph: cells, nets, grid cells, three edge types.

topo-edges connect each pin's cell to its net (one edge per pin);
grid-edges connect each cell to the grid cell containing its center (one
per cell); geom-edges connect 4-neighboring grid cells (stored once,
traversed both ways). Construction is linear: every pin, cell, and grid is
touched a constant number of times, never any pairwise scan.

Grid cells use the flat index c = i * m + j.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvariantError
from .features import GeomFeature, RudyMap
from .netlist import GridGeometry, Netlist, Placement
from .router import pin_positions


@dataclass
class RouteGraph:
    num_cells: int
    num_nets: int
    n: int
    m: int
    # topo edge k corresponds to pin k
    topo_cell: np.ndarray  # (P,)
    topo_net: np.ndarray  # (P,)
    # one grid edge per cell: the flat grid index containing its center
    grid_cell_bin: np.ndarray  # (C,)
    # undirected 4-neighbor pairs between flat grid indices, stored once
    geom_a: np.ndarray  # (G,)
    geom_b: np.ndarray  # (G,)
    # CSR adjacency, both directions per edge type
    cell_topo_ptr: np.ndarray  # (C+1,) cell -> topo edge ids
    cell_topo_edges: np.ndarray
    net_topo_ptr: np.ndarray  # (U+1,) net -> topo edge ids
    net_topo_edges: np.ndarray
    bin_cell_ptr: np.ndarray  # (nm+1,) grid -> cells whose center it holds
    bin_cells: np.ndarray
    geom_nbr_ptr: np.ndarray  # (nm+1,) grid -> adjacent grids (both ways)
    geom_nbrs: np.ndarray

    @property
    def num_grids(self) -> int:
        return self.n * self.m


@dataclass
class RawFeatures:
    x_v: np.ndarray  # (C, 5)  width, height, degree, g_h, g_v
    x_u: np.ndarray  # (U, 3)  span_w, span_h, degree
    x_c: np.ndarray  # (nm, 4) rudy_h, rudy_v, center_x, center_y
    x_et: np.ndarray  # (P, 2) one-hot direction [input, output]
    x_eg: np.ndarray  # (C, 3) dis_x, dis_y, dis to containing grid center


def _csr_from_targets(targets, num_edges: int, num_nodes: int):
    """Counting-sort CSR: edge ids grouped by their target node.

    Plain Python loops on purpose: construction cost must scale with the
    number of edges, not with numpy call overhead, so the linearity of the
    whole build is measurable.
    """
    counts = [0] * num_nodes
    for t in targets:
        counts[t] += 1
    ptr = [0] * (num_nodes + 1)
    acc = 0
    for i in range(num_nodes):
        ptr[i] = acc
        acc += counts[i]
    ptr[num_nodes] = acc
    fill = ptr[:num_nodes]
    edges = [0] * num_edges
    for k in range(num_edges):
        t = targets[k]
        edges[fill[t]] = k
        fill[t] += 1
    return np.array(ptr, dtype=np.intp), np.array(edges, dtype=np.intp)


def _cell_bins(netlist: Netlist, placement: Placement) -> np.ndarray:
    """Flat grid index of each cell center; centers clamped into the region."""
    geom = GridGeometry(netlist.region, netlist.grid)
    arr = netlist.arrays()
    cx = placement.x + 0.5 * arr.cell_w
    cy = placement.y + 0.5 * arr.cell_h
    tol = 1e-9 * max(netlist.region.width, netlist.region.height)
    out = (
        (cx < netlist.region.x0 - tol)
        | (cx > netlist.region.x1 + tol)
        | (cy < netlist.region.y0 - tol)
        | (cy > netlist.region.y1 + tol)
        | ~np.isfinite(cx)
        | ~np.isfinite(cy)
    )
    if out.any():
        v = int(np.argmax(out))
        raise InvariantError(
            f"cell {v} center ({cx[v]}, {cy[v]}) lies outside the region"
        )
    cx = np.clip(cx, netlist.region.x0, netlist.region.x1)
    cy = np.clip(cy, netlist.region.y0, netlist.region.y1)
    return (geom.bin_x(cx) * geom.m + geom.bin_y(cy)).astype(np.intp)


def build_routegraph(netlist: Netlist, placement: Placement) -> RouteGraph:
    """Assemble all edges and CSR adjacency in one linear pass per type."""
    arr = netlist.arrays()
    num_cells, num_nets, num_pins = netlist.num_cells, netlist.num_nets, netlist.num_pins
    n, m = netlist.grid.n, netlist.grid.m

    topo_cell = arr.pin_cell
    topo_net = arr.pin_net
    cell_topo_ptr, cell_topo_edges = _csr_from_targets(
        [p.cell for p in netlist.pins], num_pins, num_cells
    )
    net_topo_ptr, net_topo_edges = _csr_from_targets(
        [p.net for p in netlist.pins], num_pins, num_nets
    )

    grid_cell_bin = _cell_bins(netlist, placement)
    bin_cell_ptr, bin_cells = _csr_from_targets(
        grid_cell_bin.tolist(), num_cells, n * m
    )

    # 4-neighbor pairs: right and up from every grid, each stored once
    geom_a: list[int] = []
    geom_b: list[int] = []
    for i in range(n):
        base = i * m
        for j in range(m):
            c = base + j
            if i + 1 < n:
                geom_a.append(c)
                geom_b.append(c + m)
            if j + 1 < m:
                geom_a.append(c)
                geom_b.append(c + 1)
    directed_src = geom_a + geom_b
    directed_dst = geom_b + geom_a
    geom_nbr_ptr, geom_order = _csr_from_targets(
        directed_dst, len(directed_dst), n * m
    )
    geom_nbrs = np.array([directed_src[k] for k in geom_order], dtype=np.intp)

    return RouteGraph(
        num_cells=num_cells,
        num_nets=num_nets,
        n=n,
        m=m,
        topo_cell=topo_cell,
        topo_net=topo_net,
        grid_cell_bin=grid_cell_bin,
        geom_a=np.array(geom_a, dtype=np.intp),
        geom_b=np.array(geom_b, dtype=np.intp),
        cell_topo_ptr=cell_topo_ptr,
        cell_topo_edges=cell_topo_edges,
        net_topo_ptr=net_topo_ptr,
        net_topo_edges=net_topo_edges,
        bin_cell_ptr=bin_cell_ptr,
        bin_cells=bin_cells,
        geom_nbr_ptr=geom_nbr_ptr,
        geom_nbrs=geom_nbrs,
    )


def refresh_grid_edges(graph: RouteGraph, netlist: Netlist, placement: Placement) -> RouteGraph:
    """New graph with grid edges recomputed for moved cells.

    Topology and geom edges are position-independent, so optimizer loops
    refresh only the cell-to-grid assignment. Vectorized, but produces
    exactly what build_routegraph would (covered by tests).
    """
    bins = _cell_bins(netlist, placement)
    order = np.argsort(bins, kind="stable")
    counts = np.bincount(bins, minlength=graph.n * graph.m)
    ptr = np.zeros(graph.n * graph.m + 1, dtype=np.intp)
    np.cumsum(counts, out=ptr[1:])
    return replace(graph, grid_cell_bin=bins, bin_cell_ptr=ptr, bin_cells=order)


def build_features(
    netlist: Netlist,
    placement: Placement,
    rudy: RudyMap,
    geom_feature: GeomFeature,
) -> RawFeatures:
    """Raw (unstandardized) feature blocks for every graph vertex and edge."""
    geom = GridGeometry(netlist.region, netlist.grid)
    arr = netlist.arrays()
    num_nets = netlist.num_nets

    x_v = np.column_stack(
        [arr.cell_w, arr.cell_h, arr.cell_degree, geom_feature.g_h, geom_feature.g_v]
    )

    px, py = pin_positions(netlist, placement)
    lo_x = np.full(num_nets, np.inf)
    hi_x = np.full(num_nets, -np.inf)
    lo_y = np.full(num_nets, np.inf)
    hi_y = np.full(num_nets, -np.inf)
    np.minimum.at(lo_x, arr.pin_net, px)
    np.maximum.at(hi_x, arr.pin_net, px)
    np.minimum.at(lo_y, arr.pin_net, py)
    np.maximum.at(hi_y, arr.pin_net, py)
    x_u = np.column_stack([hi_x - lo_x, hi_y - lo_y, arr.net_degree])

    x_c = np.column_stack(
        [
            rudy.rudy_h.reshape(-1),
            rudy.rudy_v.reshape(-1),
            np.repeat(geom.centers_x, geom.m),
            np.tile(geom.centers_y, geom.n),
        ]
    )

    x_et = np.column_stack(
        [arr.pin_is_input.astype(float), (~arr.pin_is_input).astype(float)]
    )

    bins = _cell_bins(netlist, placement)
    cx = placement.x + 0.5 * arr.cell_w
    cy = placement.y + 0.5 * arr.cell_h
    gx = geom.centers_x[bins // geom.m]
    gy = geom.centers_y[bins % geom.m]
    dx = cx - gx
    dy = cy - gy
    x_eg = np.column_stack([dx, dy, np.hypot(dx, dy)])

    for name, block in [("x_v", x_v), ("x_u", x_u), ("x_c", x_c), ("x_et", x_et), ("x_eg", x_eg)]:
        if not np.isfinite(block).all():
            raise InvariantError(f"non-finite entries in feature block {name}")
    return RawFeatures(x_v=x_v, x_u=x_u, x_c=x_c, x_et=x_et, x_eg=x_eg)


def write_graph_dump(graph: RouteGraph, max_edges: int = 10) -> str:
    """Human-readable `graph.txt` summary: counts and the first few edges."""
    lines = [
        f"cells {graph.num_cells}",
        f"nets {graph.num_nets}",
        f"grids {graph.n} {graph.m}",
        f"topo_edges {len(graph.topo_cell)}",
        f"grid_edges {len(graph.grid_cell_bin)}",
        f"geom_edges {len(graph.geom_a)}",
    ]
    for k in range(min(max_edges, len(graph.topo_cell))):
        lines.append(f"topo {k} cell {graph.topo_cell[k]} net {graph.topo_net[k]}")
    for v in range(min(max_edges, len(graph.grid_cell_bin))):
        lines.append(f"grid {v} cell {v} bin {graph.grid_cell_bin[v]}")
    for k in range(min(max_edges, len(graph.geom_a))):
        lines.append(f"geom {k} {graph.geom_a[k]} {graph.geom_b[k]}")
    return "\n".join(lines) + "\n"
