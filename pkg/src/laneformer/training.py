"""Losses, Adam, and the training loop.

The objective is a weighted sum of three terms over the N target agents of
a batch: a Huber regression penalty on the best mode's full trajectory
(normalized by N * T_future), a hinge penalty pushing the best mode's
confidence a margin above every other mode's, and a Huber penalty on the
best mode's endpoint. Best mode means smallest endpoint error, ties going
to the lower index; the selection itself is not differentiated.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ParameterRegistry,
    Tensor,
    add,
    backpropagate,
    gather_rows,
    multiply,
    reduce_sum,
    relu,
    save_checkpoint,
    scale,
    smooth_l1,
    subtract,
)
from .model import ModelOutput, ModelParams, Sample, model_forward

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "select_best_mode",
    "classification_loss",
    "regression_loss",
    "goal_loss",
    "scenario_loss",
    "batch_loss",
    "AdamOptimizer",
    "TrainingConfig",
    "TrainingDiverged",
    "EpochReport",
    "TrainingResult",
    "learning_rate",
    "train_epoch",
    "train",
    "save_curves",
    "config_hash",
    "run_manifest",
]


@dataclass
class LossConfig:
    epsilon: float = 0.2          # confidence hinge margin
    huber_delta: float = 1.0
    weight_reg: float = 1.0
    weight_cls: float = 1.0
    weight_goal: float = 1.0


@dataclass
class LossBreakdown:
    """Scalar tensors for the batch objective and its three components."""

    total: Tensor
    reg: Tensor
    cls: Tensor
    goal: Tensor

    def values(self) -> dict:
        return {"loss": self.total.item(), "reg": self.reg.item(),
                "cls": self.cls.item(), "goal": self.goal.item()}


def select_best_mode(trajectories: np.ndarray, gt: np.ndarray) -> int:
    """Index of the mode whose endpoint is closest to the ground-truth endpoint."""
    trajectories = np.asarray(trajectories)
    gt = np.asarray(gt)
    d = np.linalg.norm(trajectories[:, -1, :] - gt[-1], axis=1)
    return int(np.argmin(d))  # argmin takes the first minimum on ties


def classification_loss(confidences: Tensor, best_modes, epsilon: float) -> Tensor:
    """Hinge margin over non-best modes, averaged over N * (K - 1) terms."""
    n, k = confidences.shape
    if k == 1:
        raise ValueError("classification loss undefined for a single mode")
    pieces = []
    for i, k_hat in enumerate(best_modes):
        row = gather_rows(confidences, [i])
        onehot = np.zeros((1, k))
        onehot[0, k_hat] = 1.0
        c_hat = reduce_sum(multiply(row, Tensor(onehot)), axis=1, keepdims=True)
        margins = relu(subtract(add(row, Tensor(np.full((1, 1), epsilon))), c_hat))
        pieces.append(reduce_sum(multiply(margins, Tensor(1.0 - onehot))))
    total = pieces[0]
    for p in pieces[1:]:
        total = add(total, p)
    return scale(total, 1.0 / (n * (k - 1)))


def _huber_sum(diff: Tensor, delta: float) -> Tensor:
    return reduce_sum(smooth_l1(diff, delta=delta))


def regression_loss(best_trajectories, gt: np.ndarray, delta: float) -> Tensor:
    """Per-coordinate Huber on the selected modes, / (N * T_future)."""
    n = len(best_trajectories)
    t_f = best_trajectories[0].shape[0]
    total = None
    for i, traj in enumerate(best_trajectories):
        term = _huber_sum(subtract(traj, Tensor(gt[i])), delta)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / (n * t_f))


def goal_loss(best_trajectories, gt: np.ndarray, delta: float) -> Tensor:
    """Per-coordinate Huber on the selected modes' endpoints, / N."""
    n = len(best_trajectories)
    t_f = best_trajectories[0].shape[0]
    total = None
    for i, traj in enumerate(best_trajectories):
        endpoint = gather_rows(traj, [t_f - 1])
        term = _huber_sum(subtract(endpoint, Tensor(gt[i][-1:])), delta)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / n)


def scenario_loss(output: ModelOutput, sample: Sample,
                  loss_cfg: LossConfig | None = None) -> LossBreakdown:
    """Objective over one scenario's targets; needs ground truth on the sample."""
    cfg = loss_cfg or LossConfig()
    if sample.ground_truth is None:
        raise ValueError(f"scenario {sample.scenario.name!r} has no ground truth")
    gt = np.stack([sample.ground_truth[i] for i in output.target_ids])
    best = [select_best_mode(np.stack([m.data for m in modes]), gt[i])
            for i, modes in enumerate(output.trajectories)]
    chosen = [output.trajectories[i][k] for i, k in enumerate(best)]
    reg = regression_loss(chosen, gt, cfg.huber_delta)
    cls = classification_loss(output.confidences, best, cfg.epsilon)
    goal = goal_loss(chosen, gt, cfg.huber_delta)
    total = add(add(scale(reg, cfg.weight_reg), scale(cls, cfg.weight_cls)),
                scale(goal, cfg.weight_goal))
    return LossBreakdown(total=total, reg=reg, cls=cls, goal=goal)


def batch_loss(params: ModelParams, samples, loss_cfg: LossConfig | None = None) -> LossBreakdown:
    """Mean of per-scenario objectives, one graph so a single backward works."""
    parts = [scenario_loss(model_forward(params, s), s, loss_cfg) for s in samples]
    inv = 1.0 / len(parts)

    def mean(name):
        total = getattr(parts[0], name)
        for p in parts[1:]:
            total = add(total, getattr(p, name))
        return scale(total, inv)

    return LossBreakdown(total=mean("total"), reg=mean("reg"),
                         cls=mean("cls"), goal=mean("goal"))


# ---------------------------------------------------------------------------
# optimizer


class AdamOptimizer:
    def __init__(self, registry: ParameterRegistry, lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.registry = registry
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {n: np.zeros_like(t.data) for n, t in registry.items()}
        self._v = {n: np.zeros_like(t.data) for n, t in registry.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, t in self.registry.items():
            if t.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * t.grad
            v *= b2
            v += (1.0 - b2) * t.grad * t.grad
            t.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; message names the batch and largest norms."""


@dataclass
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 8
    lr_init: float = 5e-4
    lr_late: float = 1e-4
    decay_epoch: int = 45
    max_steps: int | None = None
    checkpoint_every: int = 0     # epochs between snapshots; 0 = final only
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


def learning_rate(cfg: TrainingConfig, epoch: int) -> float:
    return cfg.lr_late if epoch >= cfg.decay_epoch else cfg.lr_init


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    mean_reg: float
    mean_cls: float
    mean_goal: float
    grad_norm: float
    wall_time: float


@dataclass
class TrainingResult:
    curve: list            # per-step dict rows
    epoch_reports: list
    final_loss: float
    steps: int


def _check_finite(registry: ParameterRegistry, loss_value: float, batch_idx: int) -> None:
    bad = not np.isfinite(loss_value)
    if not bad:
        for _, t in registry.items():
            if t.grad is not None and not np.isfinite(t.grad).all():
                bad = True
                break
    if bad:
        top = sorted(registry.norms().items(), key=lambda kv: -kv[1])[:3]
        desc = ", ".join(f"{n}={v:.3e}" for n, v in top)
        raise TrainingDiverged(
            f"non-finite loss or gradient at batch {batch_idx} (largest parameter "
            f"norms: {desc})")


def train_epoch(params: ModelParams, batches, opt: AdamOptimizer,
                cfg: TrainingConfig, epoch: int, curve: list,
                step_offset: int) -> EpochReport:
    """One pass over the prepared batches; returns the epoch report."""
    start = time.perf_counter()
    losses, regs, clss, goals = [], [], [], []
    grad_norm = 0.0
    step = step_offset
    for batch_idx, batch in enumerate(batches):
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
        params.registry.zero_grad()
        breakdown = batch_loss(params, batch, cfg.loss)
        backpropagate(breakdown.total)
        vals = breakdown.values()
        _check_finite(params.registry, vals["loss"], batch_idx)
        grad_norm = float(np.sqrt(sum(
            float((t.grad ** 2).sum()) for _, t in params.registry.items()
            if t.grad is not None)))
        opt.lr = learning_rate(cfg, epoch)
        opt.step()
        step += 1
        losses.append(vals["loss"])
        regs.append(vals["reg"])
        clss.append(vals["cls"])
        goals.append(vals["goal"])
        curve.append({"step": step, "epoch": epoch, "lr": opt.lr,
                      "grad_norm": grad_norm, **vals})
    wall = time.perf_counter() - start
    if not losses:
        return EpochReport(epoch, float("nan"), float("nan"), float("nan"),
                           float("nan"), 0.0, wall)
    return EpochReport(epoch, float(np.mean(losses)), float(np.mean(regs)),
                       float(np.mean(clss)), float(np.mean(goals)), grad_norm, wall)


def train(params: ModelParams, samples, cfg: TrainingConfig,
          progress=None, checkpoint_dir=None) -> TrainingResult:
    """Full loop: seeded shuffling, step-decayed Adam, optional snapshots.

    `samples` are prepared Samples with ground truth. Wall times appear in
    epoch reports only, never in the curve rows, so curve files stay
    byte-identical across reruns.
    """
    opt = AdamOptimizer(params.registry, lr=cfg.lr_init)
    rng = np.random.default_rng(cfg.seed)
    curve: list = []
    reports: list = []
    step = 0
    for epoch in range(cfg.epochs):
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
        order = rng.permutation(len(samples))
        batches = [[samples[j] for j in order[i:i + cfg.batch_size]]
                   for i in range(0, len(order), cfg.batch_size)]
        report = train_epoch(params, batches, opt, cfg, epoch, curve, step)
        step = curve[-1]["step"] if curve else 0
        reports.append(report)
        if progress is not None:
            progress(report)
        if (checkpoint_dir is not None and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0):
            import os
            save_checkpoint(os.path.join(checkpoint_dir, f"epoch_{epoch + 1:04d}.ckpt"),
                            params.registry, cfg.seed)
    final = curve[-1]["loss"] if curve else float("nan")
    return TrainingResult(curve=curve, epoch_reports=reports,
                          final_loss=final, steps=step)


def save_curves(path, curve) -> None:
    cols = ["step", "epoch", "loss", "reg", "cls", "goal", "lr", "grad_norm"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in curve:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float)
                              else str(row[c]) for c in cols) + "\n")


def _config_dict(c) -> dict:
    out = {}
    for k, v in vars(c).items():
        if hasattr(v, "__dataclass_fields__"):
            out[k] = _config_dict(v)
        elif isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out


def config_hash(*configs) -> str:
    """Stable digest over dataclass configs (nested ones included)."""
    blob = json.dumps([_config_dict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def run_manifest(seed: int, configs, extra=None) -> dict:
    doc = {"seed": int(seed), "config_hash": config_hash(*configs)}
    for c in configs:
        doc[type(c).__name__] = _config_dict(c)
    if extra:
        doc.update(extra)
    return doc
