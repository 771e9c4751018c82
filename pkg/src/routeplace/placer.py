"""Analytical global placement.

Objective per iteration: Loss = WL + lambda_d * D + eta * L where WL is the
weighted-average smooth wirelength, D the electrostatic density energy from
a grid Poisson solve, and L the congestion penalty of a frozen prediction
network. Positions advance by Nesterov steps with a backtracking step size.

The congestion gradient is taken in the frozen-feature sense: RUDY, the
graph's grid edges, and all non-geometric feature blocks are pinned at the
iteration anchor, so cell movement reaches the penalty only through the
geometric demand features and their Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ConfigError, DivergenceError, InvariantError
from .features import compute_rudy, geom_features, geom_jacobian
from .gnn import (
    CongestionModel,
    backward,
    congestion_penalty,
    forward,
    grid_map_from_cells,
    predict_cells,
)
from .graph import build_features, build_routegraph, refresh_grid_edges
from .netlist import GridGeometry, Netlist, Placement
from .router import (
    _cell_bin_ranges,
    electric_overflow,
    pin_positions,
    rasterize_cells,
    route,
)

# --------------------------------------------------------------------------
# Wirelength


def hpwl(netlist: Netlist, placement: Placement) -> float:
    """Half-perimeter wirelength over absolute pin coordinates."""
    arr = netlist.arrays()
    if netlist.num_nets == 0:
        return 0.0
    px, py = pin_positions(netlist, placement)
    total = 0.0
    for t in (px, py):
        hi = np.full(netlist.num_nets, -np.inf)
        lo = np.full(netlist.num_nets, np.inf)
        np.maximum.at(hi, arr.pin_net, t)
        np.minimum.at(lo, arr.pin_net, t)
        total += float((hi - lo).sum())
    return total


def _wa_axis(t, net, num_nets, gamma):
    """Weighted-average span along one axis with per-family stabilization.

    Each exponential family is shifted by its own per-net extreme (max for
    the e^{t/g} family, min for e^{-t/g}); the shift cancels in the ratio
    and keeps every exponent <= 0.
    """
    hi = np.full(num_nets, -np.inf)
    lo = np.full(num_nets, np.inf)
    np.maximum.at(hi, net, t)
    np.minimum.at(lo, net, t)
    ep = np.exp((t - hi[net]) / gamma)
    em = np.exp((lo[net] - t) / gamma)
    s1p = np.bincount(net, weights=ep, minlength=num_nets)
    sxp = np.bincount(net, weights=t * ep, minlength=num_nets)
    s1m = np.bincount(net, weights=em, minlength=num_nets)
    sxm = np.bincount(net, weights=t * em, minlength=num_nets)
    wa_p = sxp / s1p
    wa_m = sxm / s1m
    total = float((wa_p - wa_m).sum())
    dp = ep / s1p[net] * (1.0 + (t - wa_p[net]) / gamma)
    dm = em / s1m[net] * (1.0 - (t - wa_m[net]) / gamma)
    return total, dp - dm


def wirelength(netlist: Netlist, placement: Placement, gamma: float):
    """Smooth wirelength and its gradient w.r.t. cell positions.

    Per net and axis: (sum t e^{t/g})/(sum e^{t/g}) - (sum t e^{-t/g})/(sum
    e^{-t/g}); pin gradients accumulate onto the owning cell.
    """
    if gamma <= 0.0:
        raise ConfigError("wirelength smoothing gamma must be positive")
    arr = netlist.arrays()
    gx = np.zeros(netlist.num_cells)
    gy = np.zeros(netlist.num_cells)
    if netlist.num_nets == 0:
        return 0.0, gx, gy
    px, py = pin_positions(netlist, placement)
    total = 0.0
    for t, gout in ((px, gx), (py, gy)):
        wa, dpin = _wa_axis(t, arr.pin_net, netlist.num_nets, gamma)
        total += wa
        np.add.at(gout, arr.pin_cell, dpin)
    return total, gx, gy


# --------------------------------------------------------------------------
# Electrostatic density


def _poisson_neumann(rho: np.ndarray, geom: GridGeometry) -> np.ndarray:
    """Solve laplacian(psi) = -rho with zero-Neumann walls, zero-mean psi.

    Cosine basis diagonalizes the reflective 5-point Laplacian; the DC mode
    is pinned to zero, which both absorbs the (zero by construction) mean of
    rho and enforces the zero-mean gauge on psi.
    """
    n, m = rho.shape
    rho_hat = dctn(rho, type=2, norm="ortho")
    ax = 2.0 * (1.0 - np.cos(np.pi * np.arange(n) / n)) / geom.pitch_x**2
    ay = 2.0 * (1.0 - np.cos(np.pi * np.arange(m) / m)) / geom.pitch_y**2
    a = ax[:, None] + ay[None, :]
    a[0, 0] = 1.0
    psi_hat = rho_hat / a
    psi_hat[0, 0] = 0.0
    return idctn(psi_hat, type=2, norm="ortho")


def _bilinear_field(psi: np.ndarray, geom: GridGeometry, cx, cy):
    """Clamped bilinear sample of a bin-center field and its two slopes.

    Outside the outermost bin centers the value clamps to the edge and the
    corresponding slope is zero.
    """
    ux = np.clip((cx - geom.centers_x[0]) / geom.pitch_x, 0.0, geom.n - 1.0)
    uy = np.clip((cy - geom.centers_y[0]) / geom.pitch_y, 0.0, geom.m - 1.0)
    i0 = np.minimum(np.floor(ux).astype(np.intp), geom.n - 2)
    j0 = np.minimum(np.floor(uy).astype(np.intp), geom.m - 2)
    fx = ux - i0
    fy = uy - j0
    p00 = psi[i0, j0]
    p10 = psi[i0 + 1, j0]
    p01 = psi[i0, j0 + 1]
    p11 = psi[i0 + 1, j0 + 1]
    val = (1 - fx) * (1 - fy) * p00 + fx * (1 - fy) * p10 + (1 - fx) * fy * p01 + fx * fy * p11
    dvx = ((1 - fy) * (p10 - p00) + fy * (p11 - p01)) / geom.pitch_x
    dvy = ((1 - fx) * (p01 - p00) + fx * (p11 - p10)) / geom.pitch_y
    in_x = (cx >= geom.centers_x[0]) & (cx <= geom.centers_x[-1])
    in_y = (cy >= geom.centers_y[0]) & (cy <= geom.centers_y[-1])
    dvx = np.where(in_x, dvx, 0.0)
    dvy = np.where(in_y, dvy, 0.0)
    return val, dvx, dvy


def density(netlist: Netlist, placement: Placement):
    """Electrostatic density energy D = sum q_i psi(center_i) and gradient.

    rho is the rasterized cell area per bin minus its mean; the potential
    field is treated as given when differentiating, so the gradient is
    q_i times the interpolated field slope at the cell center.
    """
    geom = GridGeometry(netlist.region, netlist.grid)
    if geom.n < 2 or geom.m < 2:
        raise ConfigError("density needs a routing grid of at least 2x2")
    arr = netlist.arrays()
    area = rasterize_cells(geom, placement.x, placement.y, arr.cell_w, arr.cell_h)
    rho = area - area.mean()
    psi = _poisson_neumann(rho, geom)
    cx = placement.x + 0.5 * arr.cell_w
    cy = placement.y + 0.5 * arr.cell_h
    q = arr.cell_w * arr.cell_h
    val, dvx, dvy = _bilinear_field(psi, geom, cx, cy)
    return float((q * val).sum()), q * dvx, q * dvy


# --------------------------------------------------------------------------
# Schedules


def lambda_multiplier(delta_hpwl: float, epoch: int) -> float:
    if delta_hpwl < 0.0:
        return 1.05 * max(0.999**epoch, 0.98)
    return 1.05 * 1.05 ** (-delta_hpwl / 350000.0)


def lambda_update(lambda_d: float, delta_hpwl: float, epoch: int) -> float:
    """Density-weight schedule; multiplier 1.05 at dHPWL=0, 1.0 at 350000."""
    if lambda_d <= 0.0:
        raise ConfigError("lambda_d must stay positive")
    return lambda_d * lambda_multiplier(delta_hpwl, epoch)


def gamma_schedule(eo: float, stop_eo: float, pitch: float) -> float:
    """Geometric decay of the smoothing width, 5*pitch down to 0.1*pitch.

    Anchored to electric overflow: full smoothing at EO=1, sharpest at the
    stopping threshold; clamped outside that range.
    """
    hi = 5.0 * pitch
    lo = 0.1 * pitch
    t = (1.0 - eo) / (1.0 - stop_eo)
    t = min(max(t, 0.0), 1.0)
    return hi * (lo / hi) ** t


# --------------------------------------------------------------------------
# Nesterov step with backtracking


@dataclass
class NagState:
    x: np.ndarray
    velocity: np.ndarray
    step: float
    beta: float = 0.9


def nag_step(state: NagState, objective, gradient, project=None) -> NagState:
    """One Nesterov update: v <- beta*v - s*grad(x + beta*v), x <- x + v.

    Backtracking compares the candidate against the lookahead point where
    the gradient was taken: the step halves (at most 10 times) while
    f(cand) > f(x + beta*v), then grows 5% after an accepted decrease.
    Comparing at the lookahead keeps the search meaningful under momentum;
    the objective itself may rise transiently, as Nesterov's method
    allows. If every halving leaves the objective non-finite the step
    diverged. The stored velocity is the realized movement, measured
    after projection.
    """
    x = state.x
    look = x + state.beta * state.velocity
    g = gradient(look)
    if not np.isfinite(g).all():
        raise InvariantError("non-finite gradient in optimizer step")
    base = objective(look)
    s = state.step
    x_new = None
    accepted = False
    for attempt in range(11):
        cand = x + (state.beta * state.velocity - s * g)
        if project is not None:
            cand = project(cand)
        f1 = objective(cand)
        if np.isfinite(f1) and (not np.isfinite(base) or f1 <= base):
            x_new = cand
            accepted = True
            break
        if attempt < 10:
            s *= 0.5
        elif np.isfinite(f1):
            x_new = cand  # flat or noisy objective: take the smallest step
        else:
            raise DivergenceError("objective non-finite after 10 step halvings")
    next_step = s * 1.05 if accepted else s
    return NagState(x=x_new, velocity=x_new - x, step=next_step, beta=state.beta)


# --------------------------------------------------------------------------
# Frozen-network congestion term


class FrozenCongestion:
    """Congestion penalty as a function of positions, everything else pinned.

    RUDY, the graph, and the non-geometric feature blocks are fixed at the
    anchor placement; only g_h/g_v react to movement. value_and_grad chains
    d penalty / d g through the feature standardization and the geometric
    Jacobian, zeroing fixed cells.
    """

    def __init__(self, netlist: Netlist, anchor: Placement, model: CongestionModel, graph):
        self.netlist = netlist
        self.model = model
        self.graph = graph
        self.rudy = compute_rudy(netlist, anchor)
        gf = geom_features(netlist, anchor, self.rudy)
        self.base_feats = build_features(netlist, anchor, self.rudy, gf)
        self.movable = netlist.arrays().movable_mask

    def _feats_at(self, placement: Placement):
        gf = geom_features(self.netlist, placement, self.rudy)
        x_v = self.base_feats.x_v.copy()
        x_v[:, 3] = gf.g_h
        x_v[:, 4] = gf.g_v
        return replace(self.base_feats, x_v=x_v)

    def value(self, placement: Placement) -> float:
        feats = self.model.norm.apply(self._feats_at(placement))
        y, _ = forward(self.graph, feats, self.model.params)
        return congestion_penalty(y, self.movable)

    def value_and_grad(self, placement: Placement):
        feats = self.model.norm.apply(self._feats_at(placement))
        y, acts = forward(self.graph, feats, self.model.params)
        val = congestion_penalty(y, self.movable)
        _, dxv = backward(acts, self.movable.astype(float))
        # un-standardize, then chain through the geometric Jacobian
        d_gh = dxv[:, 3] / self.model.norm.std_v[3]
        d_gv = dxv[:, 4] / self.model.norm.std_v[4]
        dgh_dx, dgh_dy, dgv_dx, dgv_dy = geom_jacobian(self.netlist, placement, self.rudy)
        gx = d_gh * dgh_dx + d_gv * dgv_dx
        gy = d_gh * dgh_dy + d_gv * dgv_dy
        gx[~self.movable] = 0.0
        gy[~self.movable] = 0.0
        return val, gx, gy


# --------------------------------------------------------------------------
# The placement loop


@dataclass
class InflationConfig:
    enabled: bool = False
    exponent: float = 1.5
    num_adjust: int = 1
    feedback: str = "router"  # or "gnn"


@dataclass
class PlacerConfig:
    seed: int = 0
    max_iters: int = 1000
    stop_eo: float = 0.1
    target_density: float = 1.0
    eta: float = 0.0
    lambda_d: float | None = None  # None: balance against the WL gradient
    gamma: float | None = None  # None: scheduled from electric overflow
    eta_start_eo: float | None = None  # congestion term active below this EO
    inflation: InflationConfig = field(default_factory=InflationConfig)


@dataclass
class TraceRow:
    iter: int
    hpwl: float
    eo: float
    wl: float
    density: float
    congestion: float
    lambda_d: float
    gamma: float


TRACE_HEADER = "iter,hpwl,eo,wl,density,congestion,lambda_d,gamma"


def trace_to_csv(rows: list[TraceRow]) -> str:
    lines = [TRACE_HEADER]
    for r in rows:
        vals = (r.hpwl, r.eo, r.wl, r.density, r.congestion, r.lambda_d, r.gamma)
        lines.append(f"{r.iter}," + ",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def _validate_config(cfg: PlacerConfig):
    if cfg.max_iters < 0:
        raise ConfigError("max_iters must be >= 0")
    if not 0.0 < cfg.stop_eo < 1.0:
        raise ConfigError("stop_eo must be in (0, 1)")
    if cfg.eta < 0.0:
        raise ConfigError("eta must be >= 0")
    if cfg.lambda_d is not None and cfg.lambda_d <= 0.0:
        raise ConfigError("lambda_d must be positive")
    if cfg.gamma is not None and cfg.gamma <= 0.0:
        raise ConfigError("gamma must be positive")
    if cfg.target_density <= 0.0:
        raise ConfigError("target_density must be positive")
    if cfg.inflation.feedback not in ("router", "gnn"):
        raise ConfigError("inflation feedback must be 'router' or 'gnn'")
    if cfg.inflation.num_adjust < 1:
        raise ConfigError("num_adjust must be >= 1")


def initial_positions(netlist: Netlist, seed: int):
    """Movable cells at the centroid of fixed pins plus 1% seeded jitter.

    Without fixed pins the region center anchors the cloud. Fixed cells
    keep their netlist coordinates.
    """
    arr = netlist.arrays()
    reg = netlist.region
    fixed_pl = Placement(np.where(arr.fixed_mask, arr.cell_x, 0.0),
                         np.where(arr.fixed_mask, arr.cell_y, 0.0))
    on_fixed = arr.fixed_mask[arr.pin_cell]
    if on_fixed.any():
        px, py = pin_positions(netlist, fixed_pl)
        cx0 = float(px[on_fixed].mean())
        cy0 = float(py[on_fixed].mean())
    else:
        cx0 = reg.x0 + 0.5 * reg.width
        cy0 = reg.y0 + 0.5 * reg.height
    rng = np.random.default_rng(seed)
    num = netlist.num_cells
    x = cx0 - 0.5 * arr.cell_w + rng.uniform(-0.01, 0.01, num) * reg.width
    y = cy0 - 0.5 * arr.cell_h + rng.uniform(-0.01, 0.01, num) * reg.height
    x = np.where(arr.fixed_mask, arr.cell_x, x)
    y = np.where(arr.fixed_mask, arr.cell_y, y)
    x = np.clip(x, reg.x0, reg.x1 - arr.cell_w)
    y = np.clip(y, reg.y0, reg.y1 - arr.cell_h)
    return x, y


def place(
    netlist: Netlist,
    cfg: PlacerConfig,
    model: CongestionModel | None = None,
    initial: Placement | None = None,
    on_iteration=None,
):
    """Run the placement loop; returns (Placement, trace rows).

    `initial` overrides the seeded initialization (used when placement
    continues across inflation rounds). `on_iteration(i, placement, eo)`
    observes every anchor state, final one included.
    """
    _validate_config(cfg)
    if cfg.eta > 0.0 and model is None:
        raise ConfigError("a congestion model is required when eta > 0")
    arr = netlist.arrays()
    geom = GridGeometry(netlist.region, netlist.grid)
    reg = netlist.region
    num = netlist.num_cells

    if initial is None:
        x, y = initial_positions(netlist, cfg.seed)
    else:
        x, y = initial.x.copy(), initial.y.copy()
    fixed = arr.fixed_mask

    def project(z):
        zx = np.clip(z[:num], reg.x0, reg.x1 - arr.cell_w)
        zy = np.clip(z[num:], reg.y0, reg.y1 - arr.cell_h)
        zx = np.where(fixed, arr.cell_x, zx)
        zy = np.where(fixed, arr.cell_y, zy)
        return np.concatenate([zx, zy])

    z = project(np.concatenate([x, y]))
    graph = build_routegraph(netlist, Placement(z[:num], z[num:])) if cfg.eta > 0.0 else None
    lam = cfg.lambda_d
    state = None
    trace: list[TraceRow] = []
    hpwl_prev = None

    for it in range(cfg.max_iters + 1):
        pl = Placement(z[:num].copy(), z[num:].copy())
        eo = electric_overflow(netlist, pl, cfg.target_density)
        gamma = cfg.gamma if cfg.gamma is not None else gamma_schedule(eo, cfg.stop_eo, geom.pitch)
        wl, gwx, gwy = wirelength(netlist, pl, gamma)
        d, gdx, gdy = density(netlist, pl)
        if lam is None:
            denom = np.abs(gdx[~fixed]).sum() + np.abs(gdy[~fixed]).sum()
            numer = np.abs(gwx[~fixed]).sum() + np.abs(gwy[~fixed]).sum()
            lam = numer / denom if denom > 0.0 else 1.0
            lam = max(lam, 1e-12)

        cong_active = cfg.eta > 0.0 and (cfg.eta_start_eo is None or eo < cfg.eta_start_eo)
        if cong_active:
            graph = refresh_grid_edges(graph, netlist, pl)
            frozen = FrozenCongestion(netlist, pl, model, graph)
            cong = frozen.value(pl)
        else:
            frozen = None
            cong = 0.0

        hp = hpwl(netlist, pl)
        trace.append(TraceRow(it, float(hp), float(eo), float(wl), float(d),
                              float(cong), float(lam), float(gamma)))
        if on_iteration is not None:
            on_iteration(it, pl, eo)
        # do-while: the threshold is only consulted after the first update so
        # a sparse start (EO already low) still gets its wirelength pull
        if (it > 0 and eo <= cfg.stop_eo) or it == cfg.max_iters:
            break

        def objective(zz):
            p = Placement(zz[:num], zz[num:])
            val = wirelength(netlist, p, gamma)[0] + lam * density(netlist, p)[0]
            if frozen is not None:
                val += cfg.eta * frozen.value(p)
            return val

        def gradient(zz):
            p = Placement(zz[:num], zz[num:])
            _, ax, ay = wirelength(netlist, p, gamma)
            _, bx, by = density(netlist, p)
            gx = ax + lam * bx
            gy = ay + lam * by
            if frozen is not None:
                _, cx_, cy_ = frozen.value_and_grad(p)
                gx = gx + cfg.eta * cx_
                gy = gy + cfg.eta * cy_
            g = np.concatenate([gx, gy])
            g[np.concatenate([fixed, fixed])] = 0.0
            return g

        if state is None:
            g0 = gradient(z)
            scale = float(np.abs(g0).max())
            step0 = 0.05 * max(reg.width, reg.height) / max(scale, 1e-12)
            state = NagState(x=z, velocity=np.zeros_like(z), step=step0)
        state = nag_step(state, objective, gradient, project)
        z = state.x

        hp_new = hpwl(netlist, Placement(z[:num], z[num:]))
        prev = hpwl_prev if hpwl_prev is not None else hp
        lam = lambda_update(lam, hp_new - prev, it)
        hpwl_prev = hp_new

    return Placement(z[:num].copy(), z[num:].copy()), trace


# --------------------------------------------------------------------------
# Cell inflation


def inflation_ratios(netlist: Netlist, placement: Placement, cong_map: np.ndarray, exponent: float):
    """Per-cell inflation ratio: sqrt of the max congestion^exponent over
    the grids the cell overlaps, floored at 1 so cells never shrink."""
    geom = GridGeometry(netlist.region, netlist.grid)
    arr = netlist.arrays()
    exp_map = np.asarray(cong_map, dtype=float) ** exponent
    i_lo, i_hi, j_lo, j_hi = _cell_bin_ranges(
        geom, placement.x, placement.y, arr.cell_w, arr.cell_h
    )
    ratios = np.empty(netlist.num_cells)
    for v in range(netlist.num_cells):
        increment = exp_map[i_lo[v] : i_hi[v] + 1, j_lo[v] : j_hi[v] + 1].max()
        ratios[v] = max(1.0, np.sqrt(increment))
    return ratios


def _feedback_map(netlist: Netlist, placement: Placement, feedback: str, model):
    """Congestion map for inflation: routed usage/capacity, or the model's
    grid aggregate rescaled into the same around-1 regime."""
    grid = netlist.grid
    if feedback == "router":
        cmap = route(netlist, placement)
        return np.maximum(cmap.usage_h / grid.cap_h, cmap.usage_v / grid.cap_v)
    y, graph = predict_cells(model, netlist, placement)
    y_grid = grid_map_from_cells(y, graph.grid_cell_bin, grid.n, grid.m)
    return 1.0 + y_grid / (0.5 * (grid.cap_h + grid.cap_v))


def _inflate_cells(netlist: Netlist, ratios: np.ndarray) -> Netlist:
    """New netlist with movable cell sizes scaled; fixed geometry untouched."""
    reg = netlist.region
    cells = []
    for v, cell in enumerate(netlist.cells):
        if cell.fixed or ratios[v] == 1.0:
            cells.append(cell)
            continue
        cells.append(
            replace(
                cell,
                width=min(cell.width * ratios[v], reg.width),
                height=min(cell.height * ratios[v], reg.height),
            )
        )
    return Netlist(
        cells=cells,
        nets=netlist.nets,
        pins=netlist.pins,
        region=netlist.region,
        grid=netlist.grid,
    )


def inflate_and_replace(
    netlist: Netlist,
    cfg: PlacerConfig,
    model: CongestionModel | None = None,
    on_iteration=None,
):
    """Placement with congestion-feedback cell inflation rounds.

    Place until electric overflow drops under 0.2, then repeatedly: read a
    congestion map (router oracle or model grid aggregate), inflate cells by
    the ratio law, and continue placing. Intermediate rounds stop at 0.2;
    the last one runs to the configured threshold. Inflation is a spreading
    device: the returned placement is reported against the original sizes.
    """
    _validate_config(cfg)
    if cfg.inflation.feedback == "gnn" and model is None:
        raise ConfigError("gnn feedback requires a model checkpoint")
    trigger_eo = 0.2
    stage = replace(cfg, stop_eo=max(cfg.stop_eo, trigger_eo))
    pl, trace = place(netlist, stage, model, on_iteration=on_iteration)
    work = netlist
    rounds = cfg.inflation.num_adjust
    for r in range(rounds):
        cong_map = _feedback_map(work, pl, cfg.inflation.feedback, model)
        ratios = inflation_ratios(work, pl, cong_map, cfg.inflation.exponent)
        work = _inflate_cells(work, ratios)
        last = r == rounds - 1
        stage = replace(cfg, stop_eo=cfg.stop_eo if last else max(cfg.stop_eo, trigger_eo))
        pl, rows = place(work, stage, model, initial=pl, on_iteration=on_iteration)
        offset = trace[-1].iter + 1
        trace.extend(replace(row, iter=row.iter + offset) for row in rows)
    return pl, trace


def place_any(netlist: Netlist, cfg: PlacerConfig, model=None, on_iteration=None):
    """Dispatch between the plain loop and the inflation wrapper."""
    if cfg.inflation.enabled:
        return inflate_and_replace(netlist, cfg, model, on_iteration=on_iteration)
    return place(netlist, cfg, model, on_iteration=on_iteration)
