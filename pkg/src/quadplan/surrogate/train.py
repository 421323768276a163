"""Datasets, standardization and AdamW training of the centroidal network."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from quadplan.surrogate.features import HISTORY, HISTORY_SLICE, STATE_DIM, history_noise_scale, layout
from quadplan.surrogate.mlp import MlpParams, adam_step, group_l1, init_params, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

_STD_FLOOR = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass(eq=False)
class Dataset:
    X: np.ndarray            # (rows, n_features)
    Y: np.ndarray            # (rows, 15)
    groups: np.ndarray       # rows per motion description, in order
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        if self.X.shape[0] != self.Y.shape[0] or int(self.groups.sum()) != self.X.shape[0]:
            raise ValueError("dataset rows, targets and group sizes disagree")

    @property
    def rows(self) -> int:
        return self.X.shape[0]

    def group_ids(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.groups)), self.groups)


def compute_stats(X, Y, noise_pos: float = 0.01, noise_vel: float = 0.1) -> dict:
    """Standardization statistics.

    Input scales are floored at the training noise level on the history
    block (1e-3 elsewhere) so near-constant entries are not blown up.  Target
    scales are shared within each 3-vector block (c, l, k, force, moment), so
    a nearly constant coordinate such as the CoM height keeps its physical
    weight instead of becoming unit-variance noise.
    """
    floor = np.full(X.shape[1], 1e-3)
    floor[HISTORY_SLICE] = np.where(history_noise_scale() > 0, noise_vel, noise_pos)
    floor = np.maximum(floor, _STD_FLOOR)
    xs = np.maximum(X.std(axis=0), floor)
    yb = Y.std(axis=0).reshape(-1, 3)
    block = np.sqrt((yb ** 2).mean(axis=1))
    block = np.where(block > _STD_FLOOR, block, 1.0)
    return {"x_mean": X.mean(axis=0), "x_std": xs,
            "y_mean": Y.mean(axis=0), "y_std": np.repeat(block, 3)}


@dataclass(eq=False)
class SurrogateModel:
    """Network weights plus the standardization that surrounds them."""
    params: MlpParams
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    layout: dict = field(default_factory=layout)
    meta: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        y, _ = mlp_forward(self.params, (np.asarray(X) - self.x_mean) / self.x_std)
        return y * self.y_std + self.y_mean


@dataclass
class TrainHyper:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch: int = 256
    epochs: int = 64
    noise_pos: float = 0.01
    noise_vel: float = 0.1
    noise_shared: bool = True    # one draw per row across the history window
    val_fraction: float = 0.1
    seed: int = 0


@dataclass(eq=False)
class TrainResult:
    best: SurrogateModel
    final: SurrogateModel
    curves: list            # dicts: epoch, train, val
    best_epoch: int
    initial_val: float


def split_by_group(ds: Dataset, fraction: float, rng: np.random.Generator):
    """Row indices for train/validation with whole descriptions held out."""
    n_groups = len(ds.groups)
    n_val = int(round(fraction * n_groups))
    if fraction > 0.0 and n_groups > 1:
        n_val = min(max(n_val, 1), n_groups - 1)
    else:
        n_val = 0
    val_groups = np.sort(rng.permutation(n_groups)[:n_val])
    ids = ds.group_ids()
    is_val = np.isin(ids, val_groups)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def _loss(params, X, Y, chunk=4096):
    if X.shape[0] == 0:
        return math.nan
    total = 0.0
    for a in range(0, X.shape[0], chunk):
        y, _ = mlp_forward(params, X[a:a + chunk])
        total += group_l1(y, Y[a:a + chunk]) * (min(chunk, X.shape[0] - a))
    return total / X.shape[0]


def train(ds: Dataset, hyper: TrainHyper | None = None, params: MlpParams | None = None) -> TrainResult:
    """AdamW on standardized data with fresh history noise every epoch.

    Deterministic for a fixed ``hyper.seed``.  Raises ``TrainingDiverged``
    naming the batch if a loss turns non-finite.
    """
    hp = hyper or TrainHyper()
    rng = np.random.default_rng(hp.seed)
    stats = ds.meta.get("stats") or compute_stats(ds.X, ds.Y, hp.noise_pos, hp.noise_vel)
    stats = {k: np.asarray(v, dtype=float) for k, v in stats.items()}
    Xn = (ds.X - stats["x_mean"]) / stats["x_std"]
    Yn = (ds.Y - stats["y_mean"]) / stats["y_std"]
    tr_idx, va_idx = split_by_group(ds, hp.val_fraction, rng)
    if params is None:
        params = init_params(ds.X.shape[1], ds.Y.shape[1], rng)
    else:
        params = params.copy()

    vel_mask = history_noise_scale()
    hist_sigma = np.where(vel_mask > 0, hp.noise_vel, hp.noise_pos) / stats["x_std"][HISTORY_SLICE]

    def val_loss(p):
        return _loss(p, Xn[va_idx], Yn[va_idx]) if va_idx.size else _loss(p, Xn[tr_idx], Yn[tr_idx])

    initial_val = val_loss(params)
    best_params, best_val, best_epoch = params.copy(), initial_val, 0
    curves = [{"epoch": 0, "train": _loss(params, Xn[tr_idx], Yn[tr_idx]), "val": initial_val}]
    batch_no = 0
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(tr_idx)
        total, count = 0.0, 0
        for a in range(0, order.size, hp.batch):
            rows = order[a:a + hp.batch]
            xb = Xn[rows]
            if hp.noise_pos > 0.0 or hp.noise_vel > 0.0:
                xb = xb.copy()
                if hp.noise_shared:
                    # one offset per row for the whole window, like a roll-out that has drifted
                    draw = np.tile(rng.standard_normal((rows.size, STATE_DIM)), HISTORY)
                else:
                    draw = rng.standard_normal((rows.size, hist_sigma.size))
                xb[:, HISTORY_SLICE] += draw * hist_sigma
            loss, dws, dbs = mlp_backward(params, xb, Yn[rows])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at batch {batch_no} (epoch {epoch})")
            adam_step(params, dws, dbs, lr=hp.lr, weight_decay=hp.weight_decay)
            total += loss * rows.size
            count += rows.size
            batch_no += 1
        v = val_loss(params)
        curves.append({"epoch": epoch, "train": total / max(count, 1), "val": v})
        log.info("epoch %d: train %.5f val %.5f", epoch, total / max(count, 1), v)
        if v < best_val:
            best_params, best_val, best_epoch = params.copy(), v, epoch

    def wrap(p):
        return SurrogateModel(p, stats["x_mean"], stats["x_std"], stats["y_mean"], stats["y_std"],
                              layout(), dict(ds.meta, best_epoch=best_epoch))
    return TrainResult(wrap(best_params), wrap(params), curves, best_epoch, initial_val)
