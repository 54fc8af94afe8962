"""Multilabel training: BCE loss, Adam, step-decayed LR, loop, checkpoints.

The loop is fully deterministic under a fixed seed: parameter init, batch
shuffling and attention dropout each draw from their own child generator of
one seed sequence.  The best-validation-macro-F1 parameters are retained
(and written as a checkpoint when a path is configured); the returned log is
one row per (epoch, split).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tc
from .config import MswConfig
from .data import Dataset, fold_split
from .errors import ConfigError, DataError, DimensionError, NumericError
from .metrics import EvalBatch, MetricReport, evaluate
from .model import forward, predict
from .params import ParamStore, save_checkpoint
from .tensor import Tensor

PROB_CLIP = 1e-12
EVAL_BATCH = 64

LOG_COLUMNS = (
    "epoch", "split", "loss", "accuracy", "macro_f1", "samples_f1",
    "auc_macro", "auc_samples", "lr",
)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 16
    lr0: float = 1e-4
    decay_factor: float = 10.0
    decay_every: int = 10
    seed: int = 0
    checkpoint: str | None = None
    report_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.decay_every < 1 or self.decay_factor <= 0:
            raise ConfigError("decay_every must be >= 1 and decay_factor positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: lr0 / decay_factor^(epoch // decay_every)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * float(cfg.decay_factor) ** -(epoch // cfg.decay_every)


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean over B*K of -[y ln p + (1-y) ln(1-p)], with p clipped for safety."""
    y = np.asarray(labels, dtype=np.float64)
    if probs.shape != y.shape:
        raise DimensionError(f"probs {probs.shape} and labels {y.shape} differ")
    p = tc.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    term = tc.add(tc.mul(tc.tensor(y), tc.log(p)),
                  tc.mul(tc.tensor(1.0 - y), tc.log(tc.sub(1.0, p))))
    return tc.scale(tc.mean(term), -1.0)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place, from the stored gradients."""
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {name} has no gradient")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Loop


@dataclass
class EpochRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    macro_f1: float
    samples_f1: float
    auc_macro: float
    auc_samples: float
    lr: float

    def as_csv_row(self) -> list[str]:
        return [
            str(self.epoch), self.split, repr(self.loss), repr(self.accuracy),
            repr(self.macro_f1), repr(self.samples_f1), repr(self.auc_macro),
            repr(self.auc_samples), repr(self.lr),
        ]


@dataclass
class TrainResult:
    params: ParamStore  # final-epoch parameters
    best_params: ParamStore  # parameters at the best validation macro-F1
    log: list[EpochRow]
    best_epoch: int
    best_val_macro_f1: float


def _np_bce(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)).mean())


def _row(epoch, split, loss, report: MetricReport, lr) -> EpochRow:
    return EpochRow(
        epoch=epoch, split=split, loss=loss,
        accuracy=report.accuracy, macro_f1=report.macro_f1, samples_f1=report.samples_f1,
        auc_macro=float("nan") if report.auc_macro is None else report.auc_macro,
        auc_samples=float("nan") if report.auc_samples is None else report.auc_samples,
        lr=lr,
    )


def train_loop(
    cfg: MswConfig,
    params: ParamStore,
    dataset: Dataset,
    tcfg: TrainConfig,
    verbose: bool = False,
) -> TrainResult:
    """Seeded mini-batch training with per-epoch validation on fold 9.

    The dataset should already be standardized.  Train-split metrics are
    computed from the predictions gathered while the parameters moved during
    the epoch; validation metrics come from a dedicated evaluation pass.
    """
    train_recs, val_recs, _ = fold_split(dataset)
    if not train_recs:
        raise DataError("training folds are empty")
    x_train = np.stack([r.signal for r in train_recs])
    y_train = np.stack([r.labels for r in train_recs]).astype(np.float64)
    x_val = np.stack([r.signal for r in val_recs]) if val_recs else None
    y_val = np.stack([r.labels for r in val_recs]) if val_recs else None

    ss = np.random.SeedSequence(tcfg.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    adam = AdamState()
    log: list[EpochRow] = []
    best_f1 = -1.0
    best_epoch = -1
    best_params = params.copy()
    n = x_train.shape[0]

    for epoch in range(tcfg.max_epochs):
        lr = lr_at(epoch, tcfg)
        order = shuffle_rng.permutation(n)
        seen_probs = np.zeros_like(y_train)
        loss_sum = 0.0
        for b_idx, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[start : start + tcfg.batch_size]
            res = forward(x_train[idx], cfg, params, train=True, rng=dropout_rng)
            loss = bce_loss(res.probs, y_train[idx])
            lv = loss.item()
            if not np.isfinite(lv):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
            params.zero_grads()
            tc.backward(loss)
            adam_step(params, adam, lr)
            seen_probs[idx] = res.probs.data
            loss_sum += lv * len(idx)

        train_report = evaluate(EvalBatch(scores=seen_probs, labels=y_train.astype(np.int64)))
        log.append(_row(epoch, "train", loss_sum / n, train_report, lr))

        if x_val is not None:
            val_probs = predict(x_val, cfg, params, batch_size=EVAL_BATCH)
            val_report = evaluate(EvalBatch(scores=val_probs, labels=y_val))
            val_loss = _np_bce(val_probs, y_val.astype(np.float64))
            log.append(_row(epoch, "val", val_loss, val_report, lr))
            if val_report.macro_f1 > best_f1:
                best_f1 = val_report.macro_f1
                best_epoch = epoch
                best_params = params.copy()
                if tcfg.checkpoint:
                    save_checkpoint(best_params, tcfg.checkpoint,
                                    config={"model": cfg.to_dict(), "train": tcfg.to_dict(),
                                            "best_epoch": epoch})
            if verbose and epoch % tcfg.report_every == 0:
                print(
                    f"epoch {epoch:3d}  lr {lr:.2e}  train loss {loss_sum / n:.4f}  "
                    f"val loss {val_loss:.4f}  val macro-F1 {val_report.macro_f1:.4f}"
                )
        elif verbose and epoch % tcfg.report_every == 0:
            print(f"epoch {epoch:3d}  lr {lr:.2e}  train loss {loss_sum / n:.4f}")

    return TrainResult(
        params=params,
        best_params=best_params,
        log=log,
        best_epoch=best_epoch,
        best_val_macro_f1=best_f1,
    )


def format_metric_log(log: list[EpochRow], config: dict | None = None) -> str:
    """CSV text for the per-epoch log; '#' lines carry the resolved config."""
    buf = io.StringIO()
    if config:
        for key in sorted(config):
            buf.write(f"# {key} = {config[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in log:
        writer.writerow(row.as_csv_row())
    return buf.getvalue()


def write_metric_log(log: list[EpochRow], path, config: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_metric_log(log, config))


# ---------------------------------------------------------------------------
# Finite-difference audit


def finite_difference_audit(
    cfg: MswConfig,
    params: ParamStore,
    signals: np.ndarray,
    labels: np.ndarray,
    step: float = 1e-5,
) -> tuple[float, dict[str, float]]:
    """Compare every parameter gradient of the full model loss with central
    finite differences.

    Returns the max relative error and a per-parameter breakdown.  Relative
    error is |a - n| / max(|a|, |n|, 1e-3), elementwise, which ignores pure
    round-off on near-zero entries while staying far stricter than the 1e-4
    gate.
    """
    signals = np.asarray(signals, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)

    def loss_value() -> float:
        return _np_bce(forward(signals, cfg, params).probs.data, labels)

    params.zero_grads()
    loss = bce_loss(forward(signals, cfg, params).probs, labels)
    tc.backward(loss)

    per_param: dict[str, float] = {}
    for name, p in params.items():
        analytic = p.grad
        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_value()
            flat[i] = orig - step
            lm = loss_value()
            flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * step)
        numeric = numeric.reshape(p.shape)
        denom = np.maximum.reduce(
            [np.abs(analytic), np.abs(numeric), np.full_like(numeric, 1e-3)]
        )
        per_param[name] = float((np.abs(analytic - numeric) / denom).max())
    return max(per_param.values()), per_param
