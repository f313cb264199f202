"""Desk-scale training harness: AdamW with warmup + cosine, teacher regression.

A frozen random dense FFN plays the teacher. A dense student and a MoC
student start from the same weights and see the same batches, so any gap
between their loss curves comes from the channel masking alone.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from moc.ffn import FfnGradients, FfnWeights, ffn_backward, ffn_forward
from moc.linalg import ShapeError
from moc.mixture import MocConfig, moc_backward, moc_forward

PARAM_NAMES = ("w_gate", "w_up", "w_down")


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    total_steps: int = 2000
    warmup_frac: float = 0.1
    batch: int = 64
    seed: int = 0
    min_lr: float = 0.0
    eval_size: int = 1024
    teacher_scale: float = 0.5

    def __post_init__(self):
        if not 0 < self.warmup_frac < 1:
            raise ValueError(f"warmup_frac must lie in (0, 1), got {self.warmup_frac}")
        if self.peak_lr <= 0 or self.total_steps <= 0 or self.batch <= 0:
            raise ValueError("peak_lr, total_steps and batch must be positive")
        if not 0 <= self.min_lr <= self.peak_lr:
            raise ValueError("min_lr must lie in [0, peak_lr]")

    @property
    def warmup_steps(self) -> int:
        return int(self.warmup_frac * self.total_steps)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, w: FfnWeights) -> "OptimizerState":
        return cls({n: np.zeros_like(getattr(w, n)) for n in PARAM_NAMES},
                   {n: np.zeros_like(getattr(w, n)) for n in PARAM_NAMES})


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to peak_lr, then cosine decay to min_lr at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.peak_lr * step / warm
    progress = (step - warm) / (cfg.total_steps - warm)
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def adamw_step(w: FfnWeights, grads: FfnGradients, state: OptimizerState,
               cfg: TrainConfig, lr: float) -> tuple[FfnWeights, OptimizerState]:
    """One decoupled-weight-decay Adam step; returns new weights and state."""
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    new_w, new_m, new_v = {}, {}, {}
    for name in PARAM_NAMES:
        p, g = getattr(w, name), getattr(grads, name)
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, weight {p.shape}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat, v_hat = m / bc1, v / bc2
        new_w[name] = p - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p)
        new_m[name], new_v[name] = m, v
    return FfnWeights(**new_w), OptimizerState(new_m, new_v, step)


def mse_and_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class TrainResult:
    steps: list[int]
    lr: list[float]
    dense_loss: list[float]
    moc_loss: list[float]
    dense_eval: tuple[float, float]  # held-out loss (initial, final)
    moc_eval: tuple[float, float]
    dense_weights: FfnWeights = field(repr=False)
    moc_weights: FfnWeights = field(repr=False)
    teacher: FfnWeights = field(repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["step", "lr", "dense_loss", "moc_loss"])
        for row in zip(self.steps, self.lr, self.dense_loss, self.moc_loss):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "dense_eval_initial": self.dense_eval[0], "dense_eval_final": self.dense_eval[1],
            "moc_eval_initial": self.moc_eval[0], "moc_eval_final": self.moc_eval[1],
            "dense_reduction": self.dense_eval[1] / self.dense_eval[0],
            "moc_over_dense": self.moc_eval[1] / self.dense_eval[1],
        }


def train_compare(d: int, d_ffn: int, cfg: TrainConfig, moc_cfg: MocConfig,
                  task_seed: int = 0) -> TrainResult:
    """Train paired dense / MoC students to regress a frozen dense teacher."""
    moc_cfg.validate(d_ffn)
    # distinct seed-sequence entropy keeps teacher and student streams apart
    task_rng = np.random.default_rng([task_seed, 0])
    teacher = FfnWeights.random(d, d_ffn, task_rng, scale=cfg.teacher_scale)
    x_eval = task_rng.standard_normal((cfg.eval_size, d))
    y_eval = ffn_forward(x_eval, teacher)[0]

    rng = np.random.default_rng([cfg.seed, 1])
    init = FfnWeights.random(d, d_ffn, rng)
    dense_w, moc_w = init, init
    dense_opt, moc_opt = OptimizerState.zeros_like(init), OptimizerState.zeros_like(init)

    def evaluate(w, moc):
        pred = moc_forward(x_eval, w, moc_cfg)[0] if moc else ffn_forward(x_eval, w)[0]
        return mse_and_grad(pred, y_eval)[0]

    dense_eval0, moc_eval0 = evaluate(dense_w, False), evaluate(moc_w, True)
    steps, lrs, dense_curve, moc_curve = [], [], [], []
    for t in range(cfg.total_steps):
        lr = lr_at(t + 1, cfg)
        x = rng.standard_normal((cfg.batch, d))
        y = ffn_forward(x, teacher)[0]

        pred, tape = ffn_forward(x, dense_w, gcp=False)
        loss_d, grad = mse_and_grad(pred, y)
        dense_w, dense_opt = adamw_step(dense_w, ffn_backward(tape, grad, dense_w),
                                        dense_opt, cfg, lr)

        pred, mtape = moc_forward(x, moc_w, moc_cfg)
        loss_m, grad = mse_and_grad(pred, y)
        moc_w, moc_opt = adamw_step(moc_w, moc_backward(mtape, grad, moc_w, moc_cfg),
                                    moc_opt, cfg, lr)

        steps.append(t)
        lrs.append(lr)
        dense_curve.append(loss_d)
        moc_curve.append(loss_m)

    return TrainResult(steps, lrs, dense_curve, moc_curve,
                       (dense_eval0, evaluate(dense_w, False)),
                       (moc_eval0, evaluate(moc_w, True)),
                       dense_w, moc_w, teacher)


@dataclass
class ActivationStats:
    frac_negative: float
    top30_threshold: float
    frac_above_threshold: float
    bin_edges: np.ndarray
    counts: np.ndarray
    cumulative: np.ndarray

    def to_dict(self) -> dict:
        return {
            "frac_negative": self.frac_negative,
            "top30_threshold": self.top30_threshold,
            "frac_above_threshold": self.frac_above_threshold,
            "bin_edges": self.bin_edges.tolist(),
            "counts": self.counts.tolist(),
            "cumulative": self.cumulative.tolist(),
        }


def activation_stats(g: np.ndarray, bins: int = 50) -> ActivationStats:
    """Sign balance, top-30% threshold and cumulative histogram of gate inputs."""
    vals = np.asarray(g, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("activation_stats needs a non-empty matrix")
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    threshold = float(np.quantile(vals, 0.7))
    counts, edges = np.histogram(vals, bins=bins)
    return ActivationStats(
        frac_negative=float(np.mean(vals < 0)),
        top30_threshold=threshold,
        frac_above_threshold=float(np.mean(vals >= threshold)),
        bin_edges=edges,
        counts=counts,
        cumulative=np.cumsum(counts) / vals.size,
    )
