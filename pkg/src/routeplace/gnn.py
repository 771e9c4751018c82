"""Congestion prediction network over the placement graph.

Hand-written forward and reverse-mode backward passes (no autograd
framework): the placer needs gradients of the congestion penalty with
respect to raw cell features, and the trainer needs parameter gradients.

Message passing per layer:
  net message      M_U[u]      = sum over pins k of u:
                                 (W_et_u h_et[k]) * (W_v_u h_cell[k])
  cell topo msg    M_Vt[v]     = sum over pins k of v:  W_u_v h_net[k]
  grid cell msg    M_Cg[c]     = sum over cells v in c: W_v_c h_v
  grid geom msg    M_Cn[c]     = sum over neighbors c*: W_c_c h_c*
  cell grid msg    M_Vg[v]     = (alpha . h_eg[v]) * (W_c_v h_bin(v))
  fusion           M_V = max(M_Vt, M_Vg),  M_C = max(M_Cg, M_Cn)
  update           H <- H + tanh(M)
Readout concatenates final cell states with raw cell features, applies a
two-layer MLP and softplus. Max fusion ties send half the gradient to each
branch.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ChecksumError, ConfigError, InvariantError, StaleActivationsError
from .features import compute_rudy, geom_features
from .graph import RawFeatures, RouteGraph, build_features, build_routegraph

# Hidden dims for cells, nets, grid cells, topo edges, grid edges; the
# geom-edge dim is reserved (geom edges carry no features) but kept in the
# checkpoint dims block.
F_V, F_U, F_C, F_ET, F_EG = 32, 64, 16, 8, 4
F_EGEOM_RESERVED = 4
NUM_LAYERS = 2
X_V_DIM, X_U_DIM, X_C_DIM, X_ET_DIM, X_EG_DIM = 5, 3, 4, 2, 3
READOUT_HIDDEN = F_V

CHECKPOINT_MAGIC = b"RGNN"
CHECKPOINT_VERSION = 1


@dataclass
class Mlp2:
    """Two-layer perceptron, tanh after the first layer."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def forward(self, x):
        t = np.tanh(x @ self.w1.T + self.b1)
        return t @ self.w2.T + self.b2, t

    def backward(self, x, t, dy):
        """Gradients given input x, hidden activation t, output grad dy."""
        dt = dy @ self.w2
        dpre = dt * (1.0 - t * t)
        grads = Mlp2(
            w1=dpre.T @ x,
            b1=dpre.sum(axis=0),
            w2=dy.T @ t,
            b2=dy.sum(axis=0),
        )
        return grads, dpre @ self.w1


@dataclass
class LayerParams:
    w_et_u: np.ndarray  # (F_U, F_ET)
    w_v_u: np.ndarray  # (F_U, F_V)
    w_u_v: np.ndarray  # (F_V, F_U)
    w_v_c: np.ndarray  # (F_C, F_V)
    w_c_c: np.ndarray  # (F_C, F_C)
    w_c_v: np.ndarray  # (F_V, F_C)
    alpha: np.ndarray  # (F_EG,)


@dataclass
class GnnParams:
    enc_v: Mlp2
    enc_u: Mlp2
    enc_c: Mlp2
    enc_et: Mlp2
    enc_eg: Mlp2
    layers: list[LayerParams]
    readout: Mlp2


def _glorot(rng, out_dim, in_dim):
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, (out_dim, in_dim))


def _init_mlp(rng, in_dim, hidden, out_dim):
    return Mlp2(
        w1=_glorot(rng, hidden, in_dim),
        b1=np.zeros(hidden),
        w2=_glorot(rng, out_dim, hidden),
        b2=np.zeros(out_dim),
    )


def init_params(seed: int) -> GnnParams:
    """Glorot-uniform weights, zero biases; encoders use hidden = output dim."""
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(NUM_LAYERS):
        layers.append(
            LayerParams(
                w_et_u=_glorot(rng, F_U, F_ET),
                w_v_u=_glorot(rng, F_U, F_V),
                w_u_v=_glorot(rng, F_V, F_U),
                w_v_c=_glorot(rng, F_C, F_V),
                w_c_c=_glorot(rng, F_C, F_C),
                w_c_v=_glorot(rng, F_V, F_C),
                alpha=_glorot(rng, 1, F_EG).ravel(),
            )
        )
    return GnnParams(
        enc_v=_init_mlp(rng, X_V_DIM, F_V, F_V),
        enc_u=_init_mlp(rng, X_U_DIM, F_U, F_U),
        enc_c=_init_mlp(rng, X_C_DIM, F_C, F_C),
        enc_et=_init_mlp(rng, X_ET_DIM, F_ET, F_ET),
        enc_eg=_init_mlp(rng, X_EG_DIM, F_EG, F_EG),
        layers=layers,
        readout=_init_mlp(rng, F_V + X_V_DIM, READOUT_HIDDEN, 1),
    )


def zero_params() -> GnnParams:
    z = init_params(0)
    for _, a in iter_param_arrays(z):
        a[:] = 0.0
    return z


def iter_param_arrays(params: GnnParams):
    """Deterministic (name, array) walk; the flatten/checkpoint order."""
    for enc_name in ("enc_v", "enc_u", "enc_c", "enc_et", "enc_eg", "readout"):
        mlp = getattr(params, enc_name)
        for part in ("w1", "b1", "w2", "b2"):
            yield f"{enc_name}.{part}", getattr(mlp, part)
    for l, layer in enumerate(params.layers):
        for part in ("w_et_u", "w_v_u", "w_u_v", "w_v_c", "w_c_c", "w_c_v", "alpha"):
            yield f"layer{l}.{part}", getattr(layer, part)


def flatten_params(params: GnnParams) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in iter_param_arrays(params)])


def unflatten_params(flat: np.ndarray, template: GnnParams) -> GnnParams:
    out = init_params(0)
    pos = 0
    for (_, src), (_, dst) in zip(iter_param_arrays(template), iter_param_arrays(out)):
        size = src.size
        dst[:] = flat[pos : pos + size].reshape(src.shape)
        pos += size
    if pos != flat.size:
        raise InvariantError(f"flat parameter vector has {flat.size} values, expected {pos}")
    return out


def clone_params(params: GnnParams) -> GnnParams:
    return unflatten_params(flatten_params(params), params)


@dataclass
class Normalizer:
    """Per-block feature standardization frozen at training time."""

    mean_v: np.ndarray
    std_v: np.ndarray
    mean_u: np.ndarray
    std_u: np.ndarray
    mean_c: np.ndarray
    std_c: np.ndarray
    mean_et: np.ndarray
    std_et: np.ndarray
    mean_eg: np.ndarray
    std_eg: np.ndarray

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(
            np.zeros(X_V_DIM), np.ones(X_V_DIM),
            np.zeros(X_U_DIM), np.ones(X_U_DIM),
            np.zeros(X_C_DIM), np.ones(X_C_DIM),
            np.zeros(X_ET_DIM), np.ones(X_ET_DIM),
            np.zeros(X_EG_DIM), np.ones(X_EG_DIM),
        )

    @classmethod
    def fit(cls, feature_list: list[RawFeatures]) -> "Normalizer":
        """Zero-mean unit-variance stats over concatenated blocks.

        Near-constant columns (std < 1e-12) keep std 1 so they pass through.
        """
        def stats(blocks):
            data = np.concatenate(blocks, axis=0)
            if data.shape[0] == 0:
                return np.zeros(data.shape[1]), np.ones(data.shape[1])
            mean = data.mean(axis=0)
            std = data.std(axis=0)
            std = np.where(std < 1e-12, 1.0, std)
            return mean, std

        mv, sv = stats([f.x_v for f in feature_list])
        mu, su = stats([f.x_u for f in feature_list])
        mc, sc = stats([f.x_c for f in feature_list])
        met, s_et = stats([f.x_et for f in feature_list])
        meg, seg = stats([f.x_eg for f in feature_list])
        return cls(mv, sv, mu, su, mc, sc, met, s_et, meg, seg)

    def apply(self, f: RawFeatures) -> RawFeatures:
        return RawFeatures(
            x_v=(f.x_v - self.mean_v) / self.std_v,
            x_u=(f.x_u - self.mean_u) / self.std_u,
            x_c=(f.x_c - self.mean_c) / self.std_c,
            x_et=(f.x_et - self.mean_et) / self.std_et,
            x_eg=(f.x_eg - self.mean_eg) / self.std_eg,
        )


@dataclass
class GnnActivations:
    """Reverse-mode tape; one backward() per forward()."""

    graph: RouteGraph
    feats: RawFeatures
    params: GnnParams
    enc_hidden: dict
    h0: dict
    per_layer: list[dict]
    readout_in: np.ndarray
    readout_hidden: np.ndarray
    z: np.ndarray
    y: np.ndarray
    consumed: bool = False


def _check_finite(name: str, a: np.ndarray):
    if not np.isfinite(a).all():
        raise InvariantError(f"non-finite activation in {name}")


def _scatter_rows(values, index, count):
    out = np.zeros((count, values.shape[1]))
    np.add.at(out, index, values)
    return out


def forward(graph: RouteGraph, feats: RawFeatures, params: GnnParams):
    """Predict per-cell congestion; returns (y_hat, activations tape)."""
    expected = {
        "x_v": (graph.num_cells, X_V_DIM),
        "x_u": (graph.num_nets, X_U_DIM),
        "x_c": (graph.num_grids, X_C_DIM),
        "x_et": (len(graph.topo_cell), X_ET_DIM),
        "x_eg": (graph.num_cells, X_EG_DIM),
    }
    for name, shape in expected.items():
        got = getattr(feats, name).shape
        if got != shape:
            raise InvariantError(f"feature block {name} has shape {got}, expected {shape}")

    enc_hidden = {}
    h0 = {}
    for key, block, mlp in [
        ("v", feats.x_v, params.enc_v),
        ("u", feats.x_u, params.enc_u),
        ("c", feats.x_c, params.enc_c),
        ("et", feats.x_et, params.enc_et),
        ("eg", feats.x_eg, params.enc_eg),
    ]:
        out, hidden = mlp.forward(block)
        _check_finite(f"encoder {key}", out)
        enc_hidden[key] = hidden
        h0[key] = out

    hv, hu, hc = h0["v"], h0["u"], h0["c"]
    h_et, h_eg = h0["et"], h0["eg"]
    topo_cell, topo_net = graph.topo_cell, graph.topo_net
    bins = graph.grid_cell_bin
    geom_src = np.concatenate([graph.geom_b, graph.geom_a])
    geom_dst = np.concatenate([graph.geom_a, graph.geom_b])

    per_layer = []
    for l, lp in enumerate(params.layers):
        a_et = h_et @ lp.w_et_u.T  # (P, F_U)
        b_v = hv[topo_cell] @ lp.w_v_u.T  # (P, F_U)
        m_u = _scatter_rows(a_et * b_v, topo_net, graph.num_nets)

        d_uv = hu[topo_net] @ lp.w_u_v.T  # (P, F_V)
        m_v_topo = _scatter_rows(d_uv, topo_cell, graph.num_cells)

        m_c_grid = _scatter_rows(hv @ lp.w_v_c.T, bins, graph.num_grids)
        m_c_geom = _scatter_rows(hc[geom_src] @ lp.w_c_c.T, geom_dst, graph.num_grids)

        s_eg = h_eg @ lp.alpha  # (C,)
        p_cv = hc[bins] @ lp.w_c_v.T  # (C, F_V)
        m_v_grid = s_eg[:, None] * p_cv

        m_v = np.maximum(m_v_topo, m_v_grid)
        m_c = np.maximum(m_c_grid, m_c_geom)

        t_v = np.tanh(m_v)
        t_u = np.tanh(m_u)
        t_c = np.tanh(m_c)
        per_layer.append(
            dict(
                hv=hv, hu=hu, hc=hc,
                a_et=a_et, b_v=b_v, m_u=m_u,
                m_v_topo=m_v_topo, m_v_grid=m_v_grid,
                m_c_grid=m_c_grid, m_c_geom=m_c_geom,
                s_eg=s_eg, p_cv=p_cv,
                t_v=t_v, t_u=t_u, t_c=t_c,
            )
        )
        hv = hv + t_v
        hu = hu + t_u
        hc = hc + t_c
        _check_finite(f"layer {l} cell state", hv)

    readout_in = np.concatenate([hv, feats.x_v], axis=1)
    z, readout_hidden = params.readout.forward(readout_in)
    y = np.logaddexp(0.0, z).ravel()  # softplus
    _check_finite("readout", y)
    acts = GnnActivations(
        graph=graph,
        feats=feats,
        params=params,
        enc_hidden=enc_hidden,
        h0=h0,
        per_layer=per_layer,
        readout_in=readout_in,
        readout_hidden=readout_hidden,
        z=z,
        y=y,
    )
    return y, acts


def _split_max_grad(grad, a, b):
    """Gradient of max(a, b): argmax branch takes it, exact ties split half."""
    take_a = a > b
    tie = a == b
    ga = grad * (take_a + 0.5 * tie)
    gb = grad * (~take_a & ~tie) + grad * (0.5 * tie)
    return ga, gb


def backward(acts: GnnActivations, grad_out: np.ndarray):
    """Reverse pass; returns (parameter gradients, d loss / d x_v)."""
    if acts.consumed:
        raise StaleActivationsError("backward() already ran for this forward pass")
    acts.consumed = True

    graph, feats, params = acts.graph, acts.feats, acts.params
    topo_cell, topo_net = graph.topo_cell, graph.topo_net
    bins = graph.grid_cell_bin
    geom_src = np.concatenate([graph.geom_b, graph.geom_a])
    geom_dst = np.concatenate([graph.geom_a, graph.geom_b])

    grads = zero_params()
    # softplus' = sigmoid
    dz = (np.asarray(grad_out, dtype=float) * expit(acts.z.ravel()))[:, None]
    g_read, d_readout_in = params.readout.backward(
        acts.readout_in, acts.readout_hidden, dz
    )
    grads.readout = g_read
    dhv = d_readout_in[:, :F_V].copy()
    dx_v = d_readout_in[:, F_V:].copy()
    dhu = np.zeros((graph.num_nets, F_U))
    dhc = np.zeros((graph.num_grids, F_C))
    dh_et = np.zeros((len(topo_cell), F_ET))
    dh_eg = np.zeros((graph.num_cells, F_EG))

    for l in range(len(params.layers) - 1, -1, -1):
        lp = params.layers[l]
        tape = acts.per_layer[l]
        d_m_v = dhv * (1.0 - tape["t_v"] ** 2)
        d_m_u = dhu * (1.0 - tape["t_u"] ** 2)
        d_m_c = dhc * (1.0 - tape["t_c"] ** 2)
        d_m_v_topo, d_m_v_grid = _split_max_grad(d_m_v, tape["m_v_topo"], tape["m_v_grid"])
        d_m_c_grid, d_m_c_geom = _split_max_grad(d_m_c, tape["m_c_grid"], tape["m_c_geom"])

        hv_l, hu_l, hc_l = tape["hv"], tape["hu"], tape["hc"]
        # residual update paths
        dhv_l = dhv.copy()
        dhu_l = dhu.copy()
        dhc_l = dhc.copy()

        # cell topo message: scatter(hu[topo_net] @ w_u_v.T, topo_cell)
        g_d = d_m_v_topo[topo_cell]
        g_layer_u_v = g_d.T @ hu_l[topo_net]
        dhu_l += _scatter_rows(g_d @ lp.w_u_v, topo_net, graph.num_nets)

        # net message: scatter(a_et * b_v, topo_net)
        g_ab = d_m_u[topo_net]
        d_a = g_ab * tape["b_v"]
        d_b = g_ab * tape["a_et"]
        g_layer_et_u = d_a.T @ acts.h0["et"]
        dh_et += d_a @ lp.w_et_u
        g_layer_v_u = d_b.T @ hv_l[topo_cell]
        dhv_l += _scatter_rows(d_b @ lp.w_v_u, topo_cell, graph.num_cells)

        # grid cell message from cells
        g_p = d_m_c_grid[bins]
        g_layer_v_c = g_p.T @ hv_l
        dhv_l += g_p @ lp.w_v_c

        # geom neighbor message
        g_g = d_m_c_geom[geom_dst]
        g_layer_c_c = g_g.T @ hc_l[geom_src]
        dhc_l += _scatter_rows(g_g @ lp.w_c_c, geom_src, graph.num_grids)

        # cell grid message: s_eg * (hc[bins] @ w_c_v.T)
        d_p = tape["s_eg"][:, None] * d_m_v_grid
        d_s = (d_m_v_grid * tape["p_cv"]).sum(axis=1)
        g_layer_c_v = d_p.T @ hc_l[bins]
        dhc_l += _scatter_rows(d_p @ lp.w_c_v, bins, graph.num_grids)
        g_alpha = acts.h0["eg"].T @ d_s
        dh_eg += d_s[:, None] * lp.alpha[None, :]

        grads.layers[l] = LayerParams(
            w_et_u=g_layer_et_u,
            w_v_u=g_layer_v_u,
            w_u_v=g_layer_u_v,
            w_v_c=g_layer_v_c,
            w_c_c=g_layer_c_c,
            w_c_v=g_layer_c_v,
            alpha=g_alpha,
        )
        dhv, dhu, dhc = dhv_l, dhu_l, dhc_l

    g_enc_v, dx = params.enc_v.backward(feats.x_v, acts.enc_hidden["v"], dhv)
    dx_v += dx
    grads.enc_v = g_enc_v
    grads.enc_u, _ = params.enc_u.backward(feats.x_u, acts.enc_hidden["u"], dhu)
    grads.enc_c, _ = params.enc_c.backward(feats.x_c, acts.enc_hidden["c"], dhc)
    grads.enc_et, _ = params.enc_et.backward(feats.x_et, acts.enc_hidden["et"], dh_et)
    grads.enc_eg, _ = params.enc_eg.backward(feats.x_eg, acts.enc_hidden["eg"], dh_eg)
    return grads, dx_v


def congestion_penalty(y_cell: np.ndarray, movable_mask: np.ndarray) -> float:
    """Sum of predicted congestion over movable cells."""
    return float(y_cell[movable_mask].sum())


def compute_raw_features(netlist, placement) -> RawFeatures:
    """RUDY, geometric demand, and the full feature blocks in one call."""
    rudy = compute_rudy(netlist, placement)
    gf = geom_features(netlist, placement, rudy)
    return build_features(netlist, placement, rudy, gf)


def predict_cells(model: "CongestionModel", netlist, placement):
    """Per-cell congestion prediction for a placed netlist.

    Returns (y_hat, graph); the graph is reused by callers that aggregate
    predictions onto the routing grid.
    """
    graph = build_routegraph(netlist, placement)
    feats = compute_raw_features(netlist, placement)
    y, _ = forward(graph, model.norm.apply(feats), model.params)
    return y, graph


def grid_map_from_cells(y_cell: np.ndarray, grid_cell_bin: np.ndarray, n: int, m: int):
    """Mean prediction of the cells in each grid; empty grids get 0."""
    total = np.zeros(n * m)
    count = np.zeros(n * m)
    np.add.at(total, grid_cell_bin, y_cell)
    np.add.at(count, grid_cell_bin, 1.0)
    out = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return out.reshape(n, m)


# --------------------------------------------------------------------------
# Checkpoint format: magic, version, dims, normalization stats, weights, CRC


@dataclass
class CongestionModel:
    params: GnnParams
    norm: Normalizer


_DIMS = (
    X_V_DIM, X_U_DIM, X_C_DIM, X_ET_DIM, X_EG_DIM,
    F_V, F_U, F_C, F_ET, F_EG, F_EGEOM_RESERVED,
    NUM_LAYERS, READOUT_HIDDEN,
)


def _norm_arrays(norm: Normalizer):
    return (
        norm.mean_v, norm.std_v, norm.mean_u, norm.std_u, norm.mean_c,
        norm.std_c, norm.mean_et, norm.std_et, norm.mean_eg, norm.std_eg,
    )


def save_checkpoint(params: GnnParams, norm: Normalizer) -> bytes:
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<I", len(_DIMS))
    body += struct.pack(f"<{len(_DIMS)}I", *_DIMS)
    stats = np.concatenate([a.astype("<f8").ravel() for a in _norm_arrays(norm)])
    body += struct.pack("<I", stats.size)
    body += stats.tobytes()
    flat = flatten_params(params).astype("<f8")
    body += struct.pack("<Q", flat.size)
    body += flat.tobytes()
    return bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))


def load_checkpoint(data: bytes) -> tuple[GnnParams, Normalizer]:
    if len(data) < 16:
        raise ChecksumError("checkpoint truncated")
    body, crc_bytes = data[:-4], data[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise ChecksumError("checkpoint CRC mismatch")
    if body[:4] != CHECKPOINT_MAGIC:
        raise ChecksumError("not a model checkpoint (bad magic)")
    pos = 4
    version = struct.unpack_from("<I", body, pos)[0]
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint version {version} unsupported")
    ndims = struct.unpack_from("<I", body, pos)[0]
    pos += 4
    dims = struct.unpack_from(f"<{ndims}I", body, pos)
    pos += 4 * ndims
    if dims != _DIMS:
        raise ConfigError(f"checkpoint dims {dims} do not match build {_DIMS}")
    nstats = struct.unpack_from("<I", body, pos)[0]
    pos += 4
    stats = np.frombuffer(body, dtype="<f8", count=nstats, offset=pos).copy()
    pos += 8 * nstats
    nparams = struct.unpack_from("<Q", body, pos)[0]
    pos += 8
    flat = np.frombuffer(body, dtype="<f8", count=nparams, offset=pos).copy()
    pos += 8 * nparams
    if pos != len(body):
        raise ChecksumError("checkpoint has trailing bytes")

    template = init_params(0)
    params = unflatten_params(flat, template)
    sizes = [a.size for a in _norm_arrays(Normalizer.identity())]
    if sum(sizes) != nstats:
        raise ConfigError("normalization stats block has unexpected size")
    parts = np.split(stats, np.cumsum(sizes)[:-1])
    norm = Normalizer(*parts)
    return params, norm
