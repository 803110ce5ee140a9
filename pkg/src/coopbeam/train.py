"""Two-stage trainer: masked warm-up, then next-step prediction.

Stage 0 perturbs a few temporal positions per window (80% zeroed, 10% swapped
with another position from the same window, 10% kept) and trains an auxiliary
linear head to recover the historically optimal label at the masked patches.
Stage 1 trains the next-step objective: the switch head's fused likelihood is
evaluated in log space,

    log p_bar[y] = logaddexp(log sigma(-z_g) + log_softmax(z_st)[y],
                             log sigma(z_g)  + log_softmax(z_fl)[y]),

plus a weighted gate BCE against the transition indicator. Optimizer state is
reset at the stage boundary and the auxiliary head is left out of the stage-1
optimizer. The best checkpoint is picked by validation NBG-1 with ties going
to the lower validation loss.

Stage 0 needs per-window tensors (masking makes windows diverge), stage 1 and
validation run on shared-slot chunks.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dataset import Batch
from .errors import ConfigError, DivergedError
from .metrics import nbg_values
from .model import CrsModel
from .optim import Adam

_MASK_STREAM = 29
_STAGE0_ORDER_STREAM = 31
_STAGE1_ORDER_STREAM = 37

HISTORY_COLUMNS = (
    "epoch", "stage", "train_loss", "val_loss", "val_nbg1", "val_acc1", "wallclock_s"
)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs_stage0: int = 5
    epochs_stage1: int = 15
    lambda_sw: float = 0.5
    mask_ratio: float = 0.15
    warmup_enabled: bool = True
    seed: int = 0
    snapshot_every: int = 0  # optimizer steps between rolling snapshots; 0 = off

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_stage0 < 0 or self.epochs_stage1 < 0:
            raise ConfigError("epoch counts must be >= 0")
        if not self.lambda_sw > 0:
            raise ConfigError(f"lambda_sw must be > 0, got {self.lambda_sw}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")


@dataclass
class LossParts:
    total: float
    beam: float
    switch_bce: float


def stage1_loss(model: CrsModel, out, batch: Batch, lambda_sw: float):
    """Returns (loss DiffTensor, LossParts). Dispatches on the head kind."""
    y0 = np.asarray(batch.y_next) - 1
    if out.head == "switch":
        log_st = ad.log_softmax(out.logits_st)
        log_fl = ad.log_softmax(out.logits_fl)
        g = out.gate_logits
        branch_st = ad.sub(ad.gather_rows(log_st, y0), ad.softplus(g))
        branch_fl = ad.sub(ad.gather_rows(log_fl, y0), ad.softplus(ad.neg(g)))
        l_beam = ad.neg(ad.mean(ad.logaddexp(branch_st, branch_fl)))
        l_sw = ad.bce_with_logits(g, batch.s_next)
        lam = ad.tensor(np.asarray(lambda_sw, dtype=l_sw.data.dtype))
        total = ad.add(l_beam, ad.mul(lam, l_sw))
        return total, LossParts(float(total.data), float(l_beam.data), float(l_sw.data))
    if out.head == "ungated":
        l_beam = ad.cross_entropy_with_logits(out.logits_st, y0)
        return l_beam, LossParts(float(l_beam.data), float(l_beam.data), 0.0)
    # hierarchical: BS cross-entropy + beam cross-entropy under the true BS
    n_beam = model.dims.n_beam
    bs0 = y0 // n_beam
    l_bs = ad.cross_entropy_with_logits(out.logits_bs, bs0)
    flat = ad.reshape(ad.log_softmax(out.logits_beam),
                      (y0.shape[0], model.dims.n_classes))
    l_beam = ad.neg(ad.mean(ad.gather_rows(flat, bs0 * n_beam + y0 % n_beam)))
    total = ad.add(l_bs, l_beam)
    return total, LossParts(float(total.data), float(l_beam.data), 0.0)


def stage1_step(model: CrsModel, optimizer: Adam, batch: Batch,
                cfg: TrainConfig) -> LossParts:
    optimizer.zero_grad()
    out = model.forward_batch(batch)
    try:
        loss, parts = stage1_loss(model, out, batch, cfg.lambda_sw)
        loss.backward()
        optimizer.step()
    except DivergedError as exc:
        raise DivergedError(
            f"stage-1 step diverged on a batch of {batch.size} windows "
            f"(lr={cfg.lr}): {exc}"
        ) from exc
    return parts


def sample_masks(rng, n: int, t_h: int, mask_ratio: float):
    """Per-sample masked temporal positions, 80/10/10 actions, swap sources."""
    k = math.ceil(mask_ratio * t_h)
    if k < 1 or k > t_h:
        raise ConfigError(f"mask_ratio {mask_ratio} yields {k} positions for T={t_h}")
    positions = np.argsort(rng.random((n, t_h)), axis=1)[:, :k]
    u = rng.random((n, k))
    actions = np.where(u < 0.8, 0, np.where(u < 0.9, 1, 2))
    # uniform over the t_h - 1 positions that differ from the masked one
    draw = rng.integers(0, t_h - 1, size=(n, k))
    swap_src = draw + (draw >= positions)
    return positions, actions, swap_src


def apply_mask(x: np.ndarray, positions, actions, swap_src) -> np.ndarray:
    xm = x.copy()
    bi, ki = np.nonzero(actions == 0)
    xm[bi, positions[bi, ki]] = 0.0
    bi, ki = np.nonzero(actions == 1)
    xm[bi, positions[bi, ki]] = x[bi, swap_src[bi, ki]]
    return xm


def stage0_loss(model: CrsModel, batch: Batch, cfg: TrainConfig, rng):
    if batch.x is None:
        raise ConfigError("stage-0 masking needs per-window tensors, not shared slots")
    n = batch.size
    t_h = model.dims.t_h
    positions, actions, swap_src = sample_masks(rng, n, t_h, cfg.mask_ratio)
    xm = apply_mask(batch.x, positions, actions, swap_src)
    out = model.forward_windows(xm, batch.y_now)

    flat_r = ad.reshape(out.r_patches, (n * model.n_patch, model.cfg.d))
    logits = ad.add(ad.matmul(flat_r, model.params["aux.w"].tensor),
                    model.params["aux.b"].tensor)
    rows = (np.arange(n)[:, None] * model.n_patch
            + positions // model.cfg.patch_len).ravel()
    picked = ad.take0(logits, rows)
    labels = np.asarray(batch.hist_labels)[np.arange(n)[:, None], positions].ravel() - 1
    return ad.cross_entropy_with_logits(picked, labels)


def stage0_step(model: CrsModel, optimizer: Adam, batch: Batch,
                cfg: TrainConfig, rng) -> float:
    optimizer.zero_grad()
    try:
        loss = stage0_loss(model, batch, cfg, rng)
        loss.backward()
        optimizer.step()
    except DivergedError as exc:
        raise DivergedError(
            f"stage-0 step diverged on a batch of {batch.size} windows: {exc}"
        ) from exc
    return float(loss.data)


@dataclass
class TrainResult:
    model: CrsModel
    history: list  # dict rows matching HISTORY_COLUMNS
    best_epoch: int
    best_val_nbg1: float
    initial_train_beam: float
    parts_by_epoch: list  # LossParts means, stage-1 epochs only
    stage0_losses: list  # mean stage-0 loss per warm-up epoch


def _validate_pass(model: CrsModel, dataset, cfg: TrainConfig):
    """One forward-only pass: (mean stage-1 loss, NBG-1, acc-1)."""
    losses, hits, nbgs, weights = [], [], [], []
    for batch in dataset.iter_eval_batches(cfg.batch_size):
        out = model.forward_batch(batch)
        _, parts = stage1_loss(model, out, batch, cfg.lambda_sw)
        losses.append(parts.total)
        weights.append(batch.size)
        p = model.output_proba(out)
        top1 = np.argsort(-p, axis=1, kind="stable")[:, :1] + 1
        hits.append((top1[:, 0] == np.asarray(batch.y_next)).astype(np.float64))
        nbgs.append(nbg_values(batch.gains_next, top1))
    weights = np.asarray(weights, dtype=np.float64)
    loss = float(np.asarray(losses) @ weights / weights.sum())
    return loss, float(np.concatenate(nbgs).mean()), float(np.concatenate(hits).mean())


def run_training(model: CrsModel, train_ds, val_ds, cfg: TrainConfig,
                 ckpt_path=None, history_path=None, log=None) -> TrainResult:
    cfg.validate()
    if len(train_ds) == 0:
        raise ConfigError("training dataset is empty")
    if len(val_ds) == 0:
        raise ConfigError("validation dataset is empty")
    say = log if log is not None else lambda msg: None

    t0 = time.perf_counter()
    history: list[dict] = []

    def record(epoch: int, stage: int, train_loss: float) -> tuple:
        val_loss, val_nbg1, val_acc1 = _validate_pass(model, val_ds, cfg)
        row = {
            "epoch": epoch, "stage": stage,
            "train_loss": train_loss, "val_loss": val_loss,
            "val_nbg1": val_nbg1, "val_acc1": val_acc1,
            "wallclock_s": time.perf_counter() - t0,
        }
        history.append(row)
        say(f"epoch {epoch:3d} stage {stage} train {train_loss:7.4f} "
            f"val {val_loss:7.4f} nbg1 {val_nbg1:.4f} acc1 {val_acc1:.4f}")
        return val_loss, val_nbg1

    record(0, 0, float("nan"))  # step-0 metrics, the whole log if no epochs run

    epoch = 0
    stage0_losses: list[float] = []
    if cfg.warmup_enabled and cfg.epochs_stage0 > 0:
        optimizer = Adam([b for b in model.blocks() if b.trainable], lr=cfg.lr)
        mask_rng = np.random.default_rng([cfg.seed, _MASK_STREAM])
        order_rng = np.random.default_rng([cfg.seed, _STAGE0_ORDER_STREAM])
        for _ in range(cfg.epochs_stage0):
            losses = [
                stage0_step(model, optimizer, batch, cfg, mask_rng)
                for batch in train_ds.iter_window_batches(cfg.batch_size, order_rng)
            ]
            epoch += 1
            stage0_losses.append(float(np.mean(losses)))
            record(epoch, 0, stage0_losses[-1])

    # Fresh optimizer for stage 1; the auxiliary head stays out of it.
    optimizer = Adam([b for b in model.stage1_blocks() if b.trainable], lr=cfg.lr)
    order_rng = np.random.default_rng([cfg.seed, _STAGE1_ORDER_STREAM])
    best_key = None
    best_state = None
    best_epoch = epoch
    initial_train_beam = float("nan")
    parts_by_epoch: list[LossParts] = []
    step = 0
    for _ in range(cfg.epochs_stage1):
        sums = np.zeros(3)
        weight = 0
        for batch in train_ds.iter_shared_chunks(cfg.batch_size, order_rng):
            parts = stage1_step(model, optimizer, batch, cfg)
            if step == 0:
                initial_train_beam = parts.beam
            step += 1
            if cfg.snapshot_every and ckpt_path and step % cfg.snapshot_every == 0:
                model.save(f"{ckpt_path}.snap", {"snapshot_step": step})
            sums += np.array([parts.total, parts.beam, parts.switch_bce]) * batch.size
            weight += batch.size
        epoch += 1
        mean_parts = LossParts(*(sums / weight))
        parts_by_epoch.append(mean_parts)
        val_loss, val_nbg1 = record(epoch, 1, mean_parts.total)
        key = (val_nbg1, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best_state = model.state_copy()
            best_epoch = epoch

    if best_state is not None:
        model.restore_state(best_state)
        best_val_nbg1 = best_key[0]
    else:
        # no stage-1 epochs: keep the initialized / warm-up-only parameters
        best_val_nbg1 = history[-1]["val_nbg1"]

    if history_path is not None:
        write_history_csv(history_path, history)
    if ckpt_path is not None:
        model.save(ckpt_path, {
            "train": {
                "lr": cfg.lr, "batch_size": cfg.batch_size,
                "epochs_stage0": cfg.epochs_stage0 if cfg.warmup_enabled else 0,
                "epochs_stage1": cfg.epochs_stage1,
                "lambda_sw": cfg.lambda_sw, "mask_ratio": cfg.mask_ratio,
                "seed": cfg.seed,
            },
            "best_epoch": best_epoch,
            "best_val_nbg1": best_val_nbg1,
        })
    return TrainResult(
        model=model, history=history, best_epoch=best_epoch,
        best_val_nbg1=best_val_nbg1, initial_train_beam=initial_train_beam,
        parts_by_epoch=parts_by_epoch, stage0_losses=stage0_losses,
    )


def write_history_csv(path, history: list) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(HISTORY_COLUMNS))
        writer.writeheader()
        for row in history:
            writer.writerow(row)
