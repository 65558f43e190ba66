"""L1 training with AdaMax and plateau halving, on synthetic constant-velocity sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, TrainingError
from .metrics import psnr
from .model import EdenVFI, ModelConfig, build_model
from .synthesis import blend_baseline
from .tensor import Tensor, absolute, backward, mean, sub


def l1_loss(out: Tensor, gt) -> Tensor:
    """Mean absolute difference over all elements."""
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=out.dtype))
    if out.shape != gt.shape:
        raise DimensionError(f"l1_loss: shapes {out.shape} and {gt.shape} differ")
    return mean(absolute(sub(out, gt)))


@dataclass
class AdamaxState:
    m: list[np.ndarray]
    u: list[np.ndarray]
    t: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    names: list[str] | None = None

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], lr: float = 5e-4, names=None) -> "AdamaxState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr,
                   names=list(names) if names is not None else None)


def adamax_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamaxState) -> None:
    """One in-place AdaMax update.

    ``m <- b1 m + (1 - b1) g``; ``u <- max(b2 u, |g|)``;
    ``theta <- theta - lr / (1 - b1**t) * m / (u + eps)``.
    """
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = state.names[k] if state.names else f"#{k}"
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** state.t)
    for p, g, m, u in zip(params, grads, state.m, state.u):
        m *= b1
        m += (1.0 - b1) * g
        np.maximum(b2 * u, np.abs(g), out=u)
        p -= step * m / (u + state.eps)


class Adamax:
    """AdaMax over the parameters of a module."""

    def __init__(self, named_params, lr: float = 5e-4):
        named = list(named_params)
        self.params = [p for _, p in named]
        self.state = AdamaxState.zeros_like([p.data for p in self.params], lr, [n for n, _ in named])

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adamax_step([p.data for p in self.params], [p.grad for p in self.params], self.state)


@dataclass
class PlateauSchedule:
    """Halve the learning rate after ``patience`` epochs without a strictly better metric."""

    lr: float = 5e-4
    patience: int = 5
    factor: float = 0.5
    best: float = -math.inf
    since: int = 0

    def update(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.since = 0
        else:
            self.since += 1
            if self.since >= self.patience:
                self.lr *= self.factor
                self.since = 0
        return self.lr


def plateau_update(sched: PlateauSchedule, epoch_metric: float) -> float:
    return sched.update(epoch_metric)


@dataclass
class SyntheticSample:
    frames: list[np.ndarray]
    gt: np.ndarray
    velocity: tuple[float, float]
    pattern: dict = field(repr=False)


def render_pattern(pattern: dict, size: int, t: float, velocity: tuple[float, float]) -> np.ndarray:
    """Evaluate the sinusoid texture translated by ``t * velocity`` on a ``size x size`` grid."""
    vx, vy = velocity
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    xs = xs - vx * t
    ys = ys - vy * t
    amp, fx, fy, phase = pattern["amp"], pattern["fx"], pattern["fy"], pattern["phase"]
    out = np.full((3, size, size), 0.5)
    for c in range(3):
        for k in range(amp.shape[1]):
            out[c] += amp[c, k] * np.sin(2 * np.pi * (fx[c, k] * xs + fy[c, k] * ys) + phase[c, k])
    return out


def synth_sample(rng: np.random.Generator, size: int, velocity=None, waves: int = 4,
                 max_freq: float = 0.125) -> SyntheticSample:
    """Draw one four-frame sequence and its exact midpoint from ``rng``.

    The texture is a per-channel sum of ``waves`` sinusoids with spatial
    frequencies below ``max_freq`` cycles/pixel, so values stay in [0.05, 0.95].
    """
    if size < 16:
        raise DimensionError(f"synthetic frames need size >= 16, got {size}")
    amp = rng.uniform(0.2, 1.0, (3, waves))
    amp *= 0.45 / amp.sum(axis=1, keepdims=True)
    pattern = {
        "amp": amp,
        "fx": rng.uniform(-max_freq, max_freq, (3, waves)),
        "fy": rng.uniform(-max_freq, max_freq, (3, waves)),
        "phase": rng.uniform(0, 2 * np.pi, (3, waves)),
    }
    vel = tuple(rng.uniform(-2.0, 2.0, 2)) if velocity is None else tuple(float(v) for v in velocity)
    frames = [render_pattern(pattern, size, t, vel).astype(np.float32) for t in range(4)]
    gt = render_pattern(pattern, size, 1.5, vel).astype(np.float32)
    return SyntheticSample(frames, gt, vel, pattern)


def synth_batch(seed: int, n: int, size: int, min_speed: float = 0.0) -> list[SyntheticSample]:
    """``n`` samples from a seeded stream; ``min_speed`` rejects slower motions."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        s = synth_sample(rng, size)
        if math.hypot(*s.velocity) >= min_speed:
            out.append(s)
    return out


def evaluate(model: EdenVFI, samples: Sequence[SyntheticSample]) -> tuple[float, float]:
    """Mean unclamped L1 and mean clamped PSNR of the model on ``samples``."""
    l1s, ps = [], []
    for s in samples:
        raw = model.predict(s.frames, clamp=False)
        l1s.append(float(np.mean(np.abs(raw - s.gt))))
        ps.append(psnr(np.clip(raw, 0, 1), s.gt))
    return float(np.mean(l1s)), float(np.mean(ps))


def baseline_psnr(samples: Sequence[SyntheticSample]) -> float:
    return float(np.mean([psnr(blend_baseline(s.frames), s.gt) for s in samples]))


TINY_CONFIG = ModelConfig(pvt_depths=(1, 1))


@dataclass
class TrainResult:
    model: EdenVFI
    history: list[tuple[int, float, float]]
    validation: list[tuple[int, float, float]]


def train_toy(cfg: ModelConfig = TINY_CONFIG, steps: int = 500, seed: int = 7, size: int = 48,
              lr: float = 5e-4, epoch_steps: int = 50, val_count: int = 8,
              log: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Train on one synthetic sample per step (batch size 1).

    Every ``epoch_steps`` steps the model is scored on a fixed held-out set
    and the validation PSNR drives the plateau schedule.  ``validation``
    holds ``(step, l1, psnr)`` rows, starting with the untrained model.
    """
    model = build_model(cfg, seed)
    opt = Adamax(model.named_parameters(), lr)
    sched = PlateauSchedule(lr=lr)
    rng = np.random.default_rng(seed)
    val = synth_batch(seed + 1_000_003, val_count, size)
    history: list[tuple[int, float, float]] = []
    l1, p = evaluate(model, val)
    validation = [(0, l1, p)]
    for step in range(1, steps + 1):
        s = synth_sample(rng, size)
        out = model.forward([Tensor(f) for f in s.frames])
        loss = l1_loss(out, s.gt)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"loss diverged at step {step}")
        opt.zero_grad()
        backward(loss)
        try:
            opt.step()
        except NumericError as exc:
            raise TrainingError(f"step {step}: {exc}") from exc
        history.append((step, value, opt.lr))
        if log is not None:
            log(step, value, opt.lr)
        if step % epoch_steps == 0 or step == steps:
            l1, p = evaluate(model, val)
            validation.append((step, l1, p))
            if step % epoch_steps == 0:
                opt.lr = sched.update(p)
    return TrainResult(model, history, validation)
