"""RUDY routing-demand maps and differentiable geometric cell features.

The geometric feature of a cell is a softmax-weighted average of RUDY over
the 3x3 block of grids nearest the cell center. Its position Jacobian
treats the RUDY values as constants: gradient flows only through the
softmax weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .netlist import GridGeometry, Netlist, Placement
from .router import CongestionMap, pin_positions


@dataclass
class RudyMap:
    rudy_h: np.ndarray  # (n, m)
    rudy_v: np.ndarray


@dataclass
class GeomFeature:
    g_h: np.ndarray  # (C,) weighted horizontal demand at each cell
    g_v: np.ndarray
    weights: np.ndarray  # (C, 9) softmax weights over the 3x3 block
    dis: np.ndarray  # (C, 9) center-to-center distances
    block_i: np.ndarray  # (C, 9) grid column of each block member
    block_j: np.ndarray


def compute_rudy(netlist: Netlist, placement: Placement) -> RudyMap:
    """Accumulate per-net bounding-box demand onto the grid.

    A net's horizontal demand spreads area/h_e over its bbox, vertical
    area/w_e. A bbox dimension below one grid pitch is floored to one
    pitch, expanding the box symmetrically about its center, so zero-extent
    nets still deposit demand and the division is safe.
    """
    geom = GridGeometry(netlist.region, netlist.grid)
    px, py = pin_positions(netlist, placement)
    rudy_h = np.zeros((geom.n, geom.m))
    rudy_v = np.zeros((geom.n, geom.m))
    for net in netlist.nets:
        idx = list(net.pin_indices)
        if not idx:
            continue
        nx0, nx1 = px[idx].min(), px[idx].max()
        ny0, ny1 = py[idx].min(), py[idx].max()
        w_e = nx1 - nx0
        h_e = ny1 - ny0
        if w_e < geom.pitch_x:
            cx = 0.5 * (nx0 + nx1)
            nx0, nx1 = cx - 0.5 * geom.pitch_x, cx + 0.5 * geom.pitch_x
            w_e = geom.pitch_x
        if h_e < geom.pitch_y:
            cy = 0.5 * (ny0 + ny1)
            ny0, ny1 = cy - 0.5 * geom.pitch_y, cy + 0.5 * geom.pitch_y
            h_e = geom.pitch_y
        i0 = int(geom.bin_x(nx0))
        i1 = int(geom.bin_x(nx1))
        j0 = int(geom.bin_y(ny0))
        j1 = int(geom.bin_y(ny1))
        cols = np.arange(i0, i1 + 1)
        rows = np.arange(j0, j1 + 1)
        ox = np.minimum(nx1, geom.edges_x[cols + 1]) - np.maximum(nx0, geom.edges_x[cols])
        oy = np.minimum(ny1, geom.edges_y[rows + 1]) - np.maximum(ny0, geom.edges_y[rows])
        ox = np.maximum(ox, 0.0)
        oy = np.maximum(oy, 0.0)
        patch = np.outer(ox, oy)
        rudy_h[i0 : i1 + 1, j0 : j1 + 1] += patch / h_e
        rudy_v[i0 : i1 + 1, j0 : j1 + 1] += patch / w_e
    return RudyMap(rudy_h, rudy_v)


def _geom_core(netlist: Netlist, placement: Placement):
    """Block indices, distances, and softmax weights for every cell."""
    geom = GridGeometry(netlist.region, netlist.grid)
    if geom.n < 3 or geom.m < 3:
        raise ConfigError(
            f"geometric features need a grid of at least 3x3, got {geom.n}x{geom.m}"
        )
    arr = netlist.arrays()
    cx = placement.x + 0.5 * arr.cell_w
    cy = placement.y + 0.5 * arr.cell_h
    bi = geom.bin_x(cx)
    bj = geom.bin_y(cy)
    i0 = np.clip(bi - 1, 0, geom.n - 3)
    j0 = np.clip(bj - 1, 0, geom.m - 3)
    step = np.arange(3)
    block_i = (i0[:, None] + step[None, :])[:, :, None]  # (C,3,1)
    block_j = (j0[:, None] + step[None, :])[:, None, :]  # (C,1,3)
    block_i = np.broadcast_to(block_i, (len(cx), 3, 3)).reshape(-1, 9)
    block_j = np.broadcast_to(block_j, (len(cx), 3, 3)).reshape(-1, 9)
    gx = geom.centers_x[block_i]
    gy = geom.centers_y[block_j]
    dx = cx[:, None] - gx
    dy = cy[:, None] - gy
    dis = np.hypot(dx, dy)
    eps = 1e-6 * geom.pitch
    logits = 1.0 / (dis + eps)
    # max-shifted softmax; shift-invariant by construction
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    weights = expz / expz.sum(axis=1, keepdims=True)
    return geom, block_i, block_j, dx, dy, dis, eps, weights


def geom_features(netlist: Netlist, placement: Placement, rudy: RudyMap) -> GeomFeature:
    _, block_i, block_j, _, _, dis, _, weights = _geom_core(netlist, placement)
    rh = rudy.rudy_h[block_i, block_j]
    rv = rudy.rudy_v[block_i, block_j]
    return GeomFeature(
        g_h=(weights * rh).sum(axis=1),
        g_v=(weights * rv).sum(axis=1),
        weights=weights,
        dis=dis,
        block_i=block_i,
        block_j=block_j,
    )


def geom_jacobian(netlist: Netlist, placement: Placement, rudy: RudyMap):
    """d(g_h, g_v)/d(x, y) per cell with RUDY values held constant.

    Returns (dgh_dx, dgh_dy, dgv_dx, dgv_dy), each (C,). The derivative of
    the distance at dis=0 is taken as 0.
    """
    _, block_i, block_j, dx, dy, dis, eps, weights = _geom_core(netlist, placement)
    rh = rudy.rudy_h[block_i, block_j]
    rv = rudy.rudy_v[block_i, block_j]
    g_h = (weights * rh).sum(axis=1, keepdims=True)
    g_v = (weights * rv).sum(axis=1, keepdims=True)
    # z_k = 1/(dis_k + eps); dz/dpos = -(dis+eps)^-2 * dpos_component/dis
    inv2 = (dis + eps) ** -2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = np.where(dis > 0.0, dx / dis, 0.0)
        uy = np.where(dis > 0.0, dy / dis, 0.0)
    sx = -inv2 * ux
    sy = -inv2 * uy
    dgh_dx = (weights * (rh - g_h) * sx).sum(axis=1)
    dgh_dy = (weights * (rh - g_h) * sy).sum(axis=1)
    dgv_dx = (weights * (rv - g_v) * sx).sum(axis=1)
    dgv_dy = (weights * (rv - g_v) * sy).sum(axis=1)
    return dgh_dx, dgh_dy, dgv_dx, dgv_dy


def write_rudy_map(rudy: RudyMap) -> str:
    """Same text layout as a congestion map, `rudymap` header, zero caps."""
    n, m = rudy.rudy_h.shape
    lines = [f"rudymap {n} {m} 0.0 0.0"]
    for i in range(n):
        for j in range(m):
            lines.append(
                f"{i} {j} {repr(float(rudy.rudy_h[i, j]))} {repr(float(rudy.rudy_v[i, j]))}"
            )
    return "\n".join(lines) + "\n"


def read_rudy_map(text: str) -> RudyMap:
    from .errors import ParseError
    from .router import read_congestion_map

    head = text.lstrip().split(None, 1)[0] if text.strip() else ""
    if head != "rudymap":
        raise ParseError("rudy map must start with a rudymap header")
    cmap = read_congestion_map(text.replace("rudymap", "congmap", 1))
    return RudyMap(cmap.usage_h, cmap.usage_v)
