"""Training loop with validation, plateau scheduling and best-checkpoint tracking."""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidConfig, IOFailure, NonFiniteGradient, NonFiniteLoss
from ..models.checkpoint import load_state_dict, save_checkpoint, state_dict
from .loss import masked_mse, masked_sse
from .optim import AdamW, PlateauScheduler, clip_global_norm

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,train_loss,val_loss,lr"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    target: str = "real"
    lr: float = 1e-3
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfig("epochs must be >= 0 and batch_size >= 1")
        if self.target not in ("real", "imag"):
            raise InvalidConfig(f"target must be 'real' or 'imag', got {self.target!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss, lr)
    best_val: float = float("inf")
    best_epoch: int = 0
    checkpoint: Path | None = None


def format_history_row(epoch, train_loss, val_loss, lr) -> str:
    return f"{epoch},{train_loss:.9g},{val_loss:.9g},{lr:.9g}"


def write_history(path, history) -> None:
    lines = [HISTORY_HEADER] + [format_history_row(*row) for row in history]
    tmp = Path(str(path) + ".tmp")
    try:
        tmp.write_text("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IOFailure(f"could not write history {path}: {exc}") from exc


def split_loss(model, split, target: str, batch_size: int) -> float:
    """Masked MSE over a whole split in eval mode (pooled over voxel-components)."""
    model.eval()
    sse, count = 0.0, 0
    for b in split.batches(batch_size, target):
        s, c, _ = masked_sse(model.forward_batch(b), b.target, b.mask)
        sse += s
        count += c
    return sse / max(count, 1)


def train(model, train_split, val_split, config: TrainConfig, out_dir=None) -> TrainResult:
    """Optimize ``model`` in place; on return it holds the best-validation weights.

    With ``out_dir`` the history CSV (``history.csv``) is rewritten every
    epoch and ``best.ckpt`` is replaced atomically whenever validation improves.
    The scheduler is seeded with the validation loss of the initialization, so
    ``patience`` non-improving training epochs trigger a reduction.
    """
    if len(train_split) == 0 or len(val_split) == 0:
        raise InvalidConfig("training and validation splits must be non-empty")
    cfg = config
    shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    model.set_rng(np.random.default_rng(dropout_seq))
    params = model.params()
    opt = AdamW(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)

    out = Path(out_dir) if out_dir is not None else None
    ckpt = out / "best.ckpt" if out is not None else None
    hist_path = out / "history.csv" if out is not None else None
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IOFailure(f"could not create {out}: {exc}") from exc

    result = TrainResult(checkpoint=ckpt)
    best_val = split_loss(model, val_split, cfg.target, cfg.batch_size)
    sched.observe(best_val)
    result.best_val = best_val
    best_state = state_dict(model)
    if ckpt is not None:
        save_checkpoint(model, ckpt)
        write_history(hist_path, [])

    n = len(train_split)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = shuffle_rng.permutation(n)
        sse, count = 0.0, 0
        for b in train_split.batches(cfg.batch_size, cfg.target, order, merge_singleton=True):
            model.zero_grad()
            pred = model.forward_batch(b)
            loss, grad = masked_mse(pred, b.target, b.mask)
            model.backward_batch(grad)
            if cfg.grad_clip:
                clip_global_norm(params.items(), cfg.grad_clip)
            try:
                opt.step()
            except NonFiniteGradient as exc:
                raise NonFiniteGradient(exc.param_name, epoch) from None
            c = int(np.broadcast_to(b.mask, pred.shape).sum())
            sse += loss * c
            count += c
        train_loss = sse / count
        val_loss = split_loss(model, val_split, cfg.target, cfg.batch_size)
        for which, value in (("training", train_loss), ("validation", val_loss)):
            if not np.isfinite(value):
                raise NonFiniteLoss(which, epoch)
        lr_used = opt.lr
        opt.lr = sched.observe(val_loss)
        result.history.append((epoch, train_loss, val_loss, lr_used))
        if val_loss < result.best_val:
            result.best_val, result.best_epoch = val_loss, epoch
            best_state = state_dict(model)
            if ckpt is not None:
                save_checkpoint(model, ckpt)
        if hist_path is not None:
            write_history(hist_path, result.history)
        log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, lr_used)

    load_state_dict(model, best_state)
    model.eval()
    return result
