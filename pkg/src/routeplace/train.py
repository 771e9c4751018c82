"""Snapshot collection along a baseline placement run, dataset directory
IO, full-batch Adam training of the congestion predictor in log space,
and prediction quality statistics."""

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .errors import ConfigError, DivergenceError, InvariantError, ParseError
from .gnn import (
    CongestionModel,
    Normalizer,
    backward,
    compute_raw_features,
    flatten_params,
    forward,
    init_params,
    unflatten_params,
)
from .graph import build_routegraph
from .netlist import (
    Netlist,
    Placement,
    parse_netlist,
    read_placement,
    write_netlist,
    write_placement,
)
from .placer import PlacerConfig, place
from .router import (
    CongestionMap,
    cell_labels,
    electric_overflow,
    read_congestion_map,
    route,
    write_congestion_map,
)


@dataclass
class Snapshot:
    """One captured placement with its routed congestion and labels.

    eo is the electric overflow at capture time; it must agree with a
    recomputation on the stored placement (checked at collection).
    """

    netlist_id: str
    netlist: Netlist
    placement: Placement
    eo: float
    cmap: CongestionMap
    labels: np.ndarray


class ThresholdTracker:
    """Walks the 0.8, 0.75, 0.70, ... snapshot ladder.

    update(eo) returns True when the trace first reaches the pending
    threshold. After a hit the pending threshold becomes the largest
    ladder value strictly below the triggering overflow, so an iteration
    that tunnels through several thresholds yields a single snapshot.
    """

    START = 0.8
    STEP = 0.05

    def __init__(self):
        self.pending = self.START

    def update(self, eo: float) -> bool:
        if eo > self.pending + 1e-12:
            return False
        k = math.floor((self.START - eo) / self.STEP + 1e-9) + 1
        self.pending = self.START - self.STEP * k
        return True


def collect_snapshots(netlist: Netlist, cfg: PlacerConfig | None = None,
                      netlist_id: str = "netlist") -> list[Snapshot]:
    """Run a congestion-free placement and capture a routed, labeled
    snapshot each time the overflow ladder is crossed.

    The placer must be configured without the congestion term (eta=0);
    inflation settings are ignored because collection drives the plain
    loop. A run whose overflow never reaches the first threshold returns
    whatever was collected (possibly nothing) with a warning.
    """
    if cfg is None:
        cfg = PlacerConfig()
    if cfg.eta != 0.0:
        raise ConfigError("snapshot collection runs the baseline placer; set eta=0")
    tracker = ThresholdTracker()
    snaps: list[Snapshot] = []

    def capture(it, pl, eo):
        if not tracker.update(eo):
            return
        check = electric_overflow(netlist, pl, cfg.target_density)
        if abs(check - eo) > 1e-9:
            raise InvariantError(
                f"snapshot overflow {eo!r} disagrees with recomputation {check!r}"
            )
        cmap = route(netlist, pl)
        snaps.append(Snapshot(
            netlist_id=netlist_id,
            netlist=netlist,
            placement=pl,
            eo=eo,
            cmap=cmap,
            labels=cell_labels(netlist, pl, cmap),
        ))

    place(netlist, cfg, on_iteration=capture)
    if not snaps:
        warnings.warn(
            f"overflow never reached {ThresholdTracker.START}; no snapshots collected",
            RuntimeWarning,
        )
    return snaps


# --------------------------------------------------------------------------
# Dataset directories


def write_dataset(dirpath: str, netlist: Netlist, snapshots: list[Snapshot]) -> None:
    """Lay out a dataset: netlist.nl and meta.txt at the root, one
    snap_<k>/ directory per snapshot with placement.pl, map.cg and
    labels.txt (one value per line)."""
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "netlist.nl"), "w") as f:
        f.write(write_netlist(netlist))
    meta = []
    for k, snap in enumerate(snapshots):
        sub = os.path.join(dirpath, f"snap_{k}")
        os.makedirs(sub, exist_ok=True)
        with open(os.path.join(sub, "placement.pl"), "w") as f:
            f.write(write_placement(snap.placement))
        with open(os.path.join(sub, "map.cg"), "w") as f:
            f.write(write_congestion_map(snap.cmap))
        with open(os.path.join(sub, "labels.txt"), "w") as f:
            f.write("".join(repr(float(v)) + "\n" for v in snap.labels))
        meta.append(f"snap_{k} {snap.eo!r}\n")
    with open(os.path.join(dirpath, "meta.txt"), "w") as f:
        f.write("".join(meta))


def read_dataset(dirpath: str) -> list[Snapshot]:
    """Read one dataset directory back; the directory name is the
    netlist id used for train/validation grouping."""
    nl_path = os.path.join(dirpath, "netlist.nl")
    if not os.path.isfile(nl_path):
        raise ConfigError(f"not a dataset directory (no netlist.nl): {dirpath}")
    with open(nl_path) as f:
        netlist = parse_netlist(f.read())
    netlist_id = os.path.basename(os.path.normpath(dirpath))
    snaps = []
    meta_path = os.path.join(dirpath, "meta.txt")
    if not os.path.isfile(meta_path):
        raise ConfigError(f"dataset missing meta.txt: {dirpath}")
    with open(meta_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                name, eo_text = line.split()
                eo = float(eo_text)
            except ValueError as exc:
                raise ParseError(f"bad meta.txt line: {line!r}") from exc
            sub = os.path.join(dirpath, name)
            with open(os.path.join(sub, "placement.pl")) as g:
                placement = read_placement(g.read(), netlist.num_cells)
            with open(os.path.join(sub, "map.cg")) as g:
                cmap = read_congestion_map(g.read())
            with open(os.path.join(sub, "labels.txt")) as g:
                labels = np.array([float(t) for t in g.read().split()])
            if labels.shape[0] != netlist.num_cells:
                raise ParseError(
                    f"{name}: {labels.shape[0]} labels for {netlist.num_cells} cells"
                )
            snaps.append(Snapshot(netlist_id, netlist, placement, eo, cmap, labels))
    return snaps


def load_datasets(path: str) -> list[Snapshot]:
    """Accept either one dataset directory or a directory of them; a
    netlist.nl file marks a dataset root."""
    if os.path.isfile(os.path.join(path, "netlist.nl")):
        return read_dataset(path)
    snaps = []
    for name in sorted(os.listdir(path)):
        sub = os.path.join(path, name)
        if os.path.isdir(sub) and os.path.isfile(os.path.join(sub, "netlist.nl")):
            snaps.extend(read_dataset(sub))
    if not snaps:
        raise ConfigError(f"no datasets under {path}")
    return snaps


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    lr: float = 0.0002
    lr_decay: float = 0.02
    weight_decay: float = 0.0002
    epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.2


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float | None


@dataclass
class _Example:
    graph: object
    feats: object
    labels: np.ndarray
    movable: np.ndarray


def _validate_train_config(cfg: TrainConfig) -> None:
    # lr = 0 is allowed: it freezes parameters, weight decay included
    if cfg.lr < 0.0:
        raise ConfigError("lr must be non-negative")
    if cfg.epochs < 1:
        raise ConfigError("epochs must be at least 1")
    if not 0.0 <= cfg.lr_decay < 1.0:
        raise ConfigError("lr_decay must lie in [0, 1)")
    if cfg.weight_decay < 0.0:
        raise ConfigError("weight_decay must be non-negative")
    if not 0.0 <= cfg.val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in [0, 1)")


def _prepare(snapshots: list[Snapshot]) -> list[_Example]:
    out = []
    for s in snapshots:
        movable = s.netlist.arrays().movable_mask
        if not movable.any():
            raise ConfigError(f"snapshot of {s.netlist_id} has no movable cells")
        out.append(_Example(
            graph=build_routegraph(s.netlist, s.placement),
            feats=compute_raw_features(s.netlist, s.placement),
            labels=np.asarray(s.labels, dtype=float),
            movable=movable,
        ))
    return out


def _batch_loss(examples, params, norm, with_grad: bool):
    """Mean over snapshots of the movable-cell mean of
    (log1p(prediction) - log1p(label))^2, and optionally the parameter
    gradient of that mean, reduced in snapshot order."""
    total = 0.0
    gsum = None
    for ex in examples:
        y, acts = forward(ex.graph, norm.apply(ex.feats), params)
        mov = ex.movable
        cnt = int(mov.sum())
        diff = np.log1p(y[mov]) - np.log1p(ex.labels[mov])
        total += float(diff @ diff) / cnt
        if with_grad:
            dy = np.zeros_like(y)
            dy[mov] = 2.0 * diff / (1.0 + y[mov]) / (cnt * len(examples))
            grads, _ = backward(acts, dy)
            flat = flatten_params(grads)
            gsum = flat if gsum is None else gsum + flat
    return total / len(examples), gsum


def dataset_loss(model: CongestionModel, snapshots: list[Snapshot]) -> float:
    """The training objective of a model on a list of snapshots."""
    if not snapshots:
        raise ConfigError("empty dataset")
    examples = _prepare(snapshots)
    loss, _ = _batch_loss(examples, model.params, model.norm, with_grad=False)
    return loss


def _split_by_netlist(dataset, cfg):
    keys = sorted({s.netlist_id for s in dataset})
    if len(keys) < 2 or cfg.val_fraction == 0.0:
        return dataset, []
    rng = np.random.default_rng(cfg.seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    n_val = min(math.ceil(cfg.val_fraction * len(keys)), len(keys) - 1)
    val_keys = set(order[:n_val])
    train = [s for s in dataset if s.netlist_id not in val_keys]
    val = [s for s in dataset if s.netlist_id in val_keys]
    return train, val


def train(dataset: list[Snapshot], cfg: TrainConfig | None = None):
    """Fit the congestion predictor on snapshots with full-batch Adam.

    The learning rate shrinks by the decay factor every epoch and scales
    the decoupled weight decay, so lr = 0 leaves parameters untouched.
    Validation holds out whole netlists (never individual snapshots of a
    run); with a single netlist everything trains and the best epoch is
    chosen by training loss instead. Returns the best model (parameters
    plus the feature statistics frozen on the training split) and the
    per-epoch history.
    """
    if cfg is None:
        cfg = TrainConfig()
    _validate_train_config(cfg)
    if not dataset:
        raise ConfigError("empty dataset")
    train_snaps, val_snaps = _split_by_netlist(dataset, cfg)
    train_ex = _prepare(train_snaps)
    val_ex = _prepare(val_snaps)
    norm = Normalizer.fit([ex.feats for ex in train_ex])

    template = init_params(cfg.seed)
    theta = flatten_params(template)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8

    history: list[EpochStats] = []
    best_score = None
    best_theta = theta.copy()
    for epoch in range(cfg.epochs):
        lr_t = cfg.lr * (1.0 - cfg.lr_decay) ** epoch
        params = unflatten_params(theta, template)
        train_loss, g = _batch_loss(train_ex, params, norm, with_grad=True)
        if not math.isfinite(train_loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        val_loss = None
        if val_ex:
            val_loss, _ = _batch_loss(val_ex, params, norm, with_grad=False)
            if not math.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochStats(epoch, lr_t, train_loss, val_loss))
        score = val_loss if val_loss is not None else train_loss
        if best_score is None or score < best_score:
            best_score = score
            best_theta = theta.copy()

        t = epoch + 1
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta = theta - lr_t * (m_hat / (np.sqrt(v_hat) + eps) + cfg.weight_decay * theta)

    model = CongestionModel(params=unflatten_params(best_theta, template), norm=norm)
    return model, history


# --------------------------------------------------------------------------
# Prediction quality


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity over one global window.

    Dynamic range is the maximum over both maps; constants follow the
    usual choices C1=(0.01R)^2, C2=(0.03R)^2 with unbiased variance
    estimates. Identical maps score exactly 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"map shapes differ: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ConfigError("need at least 2 bins for a similarity window")
    if np.array_equal(a, b):
        return 1.0
    r = max(float(a.max()), float(b.max()))
    c1 = (0.01 * r) ** 2
    c2 = (0.03 * r) ** 2
    n = a.size
    ma, mb = a.mean(), b.mean()
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    cov = float(((a - ma) * (b - mb)).sum()) / (n - 1)
    num = (2.0 * ma * mb + c1) * (2.0 * cov + c2)
    den = (ma * ma + mb * mb + c1) * (va + vb + c2)
    return float(num / den)


def eval_stats(y_pred, y_true, grid_pred=None, grid_true=None) -> dict:
    """Cell-level NRMSE and rank correlations, plus grid-level SSIM when
    both maps are supplied (None otherwise).

    NRMSE normalizes the RMSE by the label range; a constant label
    vector is flagged degenerate and reports 0 for a perfect match,
    infinity otherwise.
    """
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    y_true = np.asarray(y_true, dtype=float).ravel()
    if y_pred.shape != y_true.shape:
        raise ConfigError(f"length mismatch: {y_pred.shape[0]} vs {y_true.shape[0]}")
    if y_pred.shape[0] < 2:
        raise ConfigError("need at least 2 samples")
    rmse = float(np.sqrt(np.mean((y_pred - y_true) ** 2)))
    spread = float(y_true.max() - y_true.min())
    degenerate = spread == 0.0
    if degenerate:
        nrmse = 0.0 if rmse == 0.0 else float("inf")
    else:
        nrmse = rmse / spread
    if degenerate or y_pred.max() == y_pred.min():
        # correlation against a constant vector is undefined
        pearson = spearman = kendall = float("nan")
    else:
        pearson = float(scipy_stats.pearsonr(y_pred, y_true).statistic)
        spearman = float(scipy_stats.spearmanr(y_pred, y_true).statistic)
        kendall = float(scipy_stats.kendalltau(y_pred, y_true).statistic)
    out = {
        "nrmse": nrmse,
        "nrmse_degenerate": degenerate,
        "pearson": pearson,
        "spearman": spearman,
        "kendall": kendall,
        "ssim": None,
    }
    if grid_pred is not None and grid_true is not None:
        out["ssim"] = ssim(grid_pred, grid_true)
    return out
