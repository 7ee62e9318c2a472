"""Training and evaluation loops at desk scale.

One optimizer step = one shuffled mini-batch, per-sample forward passes, the
combined dice + cross-entropy loss averaged over the batch, one backward, an
AdamW update at the cosine-annealed learning rate.  The loop checkpoints the
best mean-DSC parameters and logs CSV rows at every evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, SegSample, augment
from .losses import ce_loss, dice_loss
from .metrics import MetricsReport, dsc_metric, hd95_metric
from .optim import AdamW, cosine_lr
from .tensor import NonFiniteError, Rng, no_grad, softmax_channels

CSV_HEADER = "epoch,step,lr,loss,dice_loss,ce_loss,mean_dsc,mean_hd95"

__all__ = ["TrainConfig", "TrainResult", "train_loop", "evaluate", "CSV_HEADER"]


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 200
    max_steps: int | None = 200
    alpha: float = 0.6
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_every: int = 25
    stop_dsc: float | None = None

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_every < 1:
            raise ValueError("batch_size, max_epochs and eval_every must be >= 1")
        return self


@dataclass
class TrainResult:
    best_dsc: float
    best_step: int
    steps_run: int
    best_state: dict[str, np.ndarray]
    history: list[dict]

    def history_csv(self) -> str:
        rows = [CSV_HEADER]
        for row in self.history:
            hd = row["mean_hd95"]
            rows.append("{epoch},{step},{lr:.10g},{loss:.10g},{dice_loss:.10g},{ce_loss:.10g},{mean_dsc:.10g},{hd}".format(
                hd=f"{hd:.10g}" if hd is not None else "nan", **row))
        return "\n".join(rows) + "\n"


def evaluate(model, samples: list[SegSample], *, alpha: float = 0.6,
             with_hd95: bool = True, eval_mode: bool = True,
             hd95_mode: str = "pooled") -> MetricsReport:
    """Argmax predictions per sample, then DSC/HD95 averaged over samples and
    then over classes.  HD95 skips (sample, class) pairs where either
    boundary is empty; a class with no valid pair reports None."""
    if not samples:
        raise ValueError("evaluate: empty sample list")
    num_classes = model.cfg.num_classes if hasattr(model, "cfg") else int(
        max(int(s.mask.max()) for s in samples) + 1)
    was_training = getattr(model, "training", False)
    if eval_mode and hasattr(model, "eval"):
        model.eval()
    try:
        dsc_rows = []
        hd_sums = np.zeros(num_classes)
        hd_counts = np.zeros(num_classes, dtype=int)
        loss_sum = dice_sum = ce_sum = 0.0
        for s in samples:
            with no_grad():
                logits = model.forward(s.image)
                d = dice_loss(softmax_channels(logits), s.mask).item()
                c = ce_loss(logits, s.mask).item()
            dice_sum += d
            ce_sum += c
            loss_sum += alpha * d + (1.0 - alpha) * c
            pred = logits.data.argmax(axis=0)
            dsc_rows.append(dsc_metric(pred, s.mask, num_classes))
            if with_hd95:
                for cls, value in enumerate(hd95_metric(pred, s.mask, num_classes, hd95_mode)):
                    if value is not None:
                        hd_sums[cls] += value
                        hd_counts[cls] += 1
    finally:
        if eval_mode and was_training and hasattr(model, "train"):
            model.train()

    n = len(samples)
    per_class_dsc = np.mean(dsc_rows, axis=0)
    per_class_hd95 = [hd_sums[c] / hd_counts[c] if hd_counts[c] else None
                      for c in range(num_classes)]
    valid_hd = [v for v in per_class_hd95 if v is not None]
    return MetricsReport(
        per_class_dsc=[float(v) for v in per_class_dsc],
        mean_dsc=float(per_class_dsc.mean()),
        per_class_hd95=per_class_hd95,
        mean_hd95=float(np.mean(valid_hd)) if valid_hd else None,
        loss=loss_sum / n, dice_loss=dice_sum / n, ce_loss=ce_sum / n,
    )


def _snapshot(model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def restore_state(model, state: dict[str, np.ndarray]):
    for name, p in model.named_parameters():
        p.data[...] = state[name]


def train_loop(model, samples: list[SegSample], cfg: TrainConfig,
               eval_samples: list[SegSample] | None = None,
               progress=None) -> TrainResult:
    """Run the optimization; deterministic for a fixed seed.  A non-finite
    loss aborts with a diagnostic.  Returns history plus the best-DSC state."""
    cfg.validate()
    if not samples:
        raise ValueError("train_loop: empty dataset")
    eval_samples = eval_samples or samples
    rng = Rng(cfg.seed)
    shuffle_rng = rng.child(1)
    augment_rng = rng.child(2)

    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.max_epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    alpha = cfg.alpha
    history: list[dict] = []
    best_dsc, best_step, best_state = -1.0, 0, _snapshot(model)
    run_loss = run_dice = run_ce = 0.0
    run_count = 0
    step = 0
    do_augment = cfg.augment.any_enabled() or cfg.augment.target_size is not None
    stop = False

    model.train()
    for epoch in range(cfg.max_epochs):
        if stop or step >= total_steps:
            break
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if step >= total_steps:
                break
            batch = order[start:start + cfg.batch_size]
            model.zero_grad()
            loss_tensor = None
            batch_dice = batch_ce = 0.0
            for idx in batch:
                sample = samples[int(idx)]
                if do_augment:
                    sample = augment(sample, augment_rng.child(epoch * n + int(idx)), cfg.augment)
                try:
                    logits = model.forward(sample.image)
                    d = dice_loss(softmax_channels(logits), sample.mask)
                    c = ce_loss(logits, sample.mask)
                except NonFiniteError as exc:
                    raise RuntimeError(
                        f"training diverged at step {step} on sample {sample.sample_id}: {exc}") from exc
                term = alpha * d + (1.0 - alpha) * c
                batch_dice += d.item()
                batch_ce += c.item()
                loss_tensor = term if loss_tensor is None else loss_tensor + term
            loss_tensor = loss_tensor * (1.0 / len(batch))
            loss_value = loss_tensor.item()
            if not math.isfinite(loss_value):
                raise RuntimeError(f"training diverged at step {step}: loss={loss_value}")
            loss_tensor.backward()
            lr = cosine_lr(step, total_steps, cfg.lr)
            opt.step(lr)
            step += 1

            run_loss += loss_value
            run_dice += batch_dice / len(batch)
            run_ce += batch_ce / len(batch)
            run_count += 1

            if step % cfg.eval_every == 0 or step == total_steps:
                report = evaluate(model, eval_samples, alpha=alpha)
                row = {
                    "epoch": epoch, "step": step, "lr": lr,
                    "loss": run_loss / run_count, "dice_loss": run_dice / run_count,
                    "ce_loss": run_ce / run_count, "mean_dsc": report.mean_dsc,
                    "mean_hd95": report.mean_hd95,
                }
                history.append(row)
                run_loss = run_dice = run_ce = 0.0
                run_count = 0
                if progress is not None:
                    progress(row)
                if report.mean_dsc > best_dsc:
                    best_dsc = report.mean_dsc
                    best_step = step
                    best_state = _snapshot(model)
                if cfg.stop_dsc is not None and report.mean_dsc >= cfg.stop_dsc:
                    stop = True
                    break

    if not history:
        report = evaluate(model, eval_samples, alpha=alpha)
        best_dsc, best_step, best_state = report.mean_dsc, step, _snapshot(model)
        history.append({"epoch": 0, "step": step, "lr": cfg.lr, "loss": float("nan"),
                        "dice_loss": float("nan"), "ce_loss": float("nan"),
                        "mean_dsc": report.mean_dsc, "mean_hd95": report.mean_hd95})

    return TrainResult(best_dsc=best_dsc, best_step=best_step, steps_run=step,
                       best_state=best_state, history=history)
