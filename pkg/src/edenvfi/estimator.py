"""scikit-learn style wrapper: ``fit`` trains on quadruplets, ``predict`` interpolates."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import NumericError, TrainingError
from .metrics import psnr
from .model import ModelConfig, build_model
from .tensor import Tensor, backward
from .training import Adamax, PlateauSchedule, l1_loss
from .validation import check_frames, check_targets


class FrameInterpolator(RegressorMixin, BaseEstimator):
    """Midpoint-frame regressor over four-frame sequences.

    Args:
        pvt_depths: transformer blocks per stage.
        use_pvt: enable the transformer encoder.
        use_cnn: enable the convolutional encoder.
        steps: optimizer steps in ``fit`` (one sequence per step).
        learning_rate: initial AdaMax learning rate.
        patience: epochs without a lower mean training L1 before halving the rate.
        random_state: seed for initialization and sample order.

    ``X`` has shape ``[n x 4 x 3 x H x W]`` and ``y`` ``[n x 3 x H x W]``, values in [0, 1].
    ``score`` is the mean PSNR in dB (higher is better).
    """

    def __init__(self, pvt_depths=(1, 1), use_pvt=True, use_cnn=True, steps=100, learning_rate=5e-4,
                 patience=5, random_state=0):
        self.pvt_depths = pvt_depths
        self.use_pvt = use_pvt
        self.use_cnn = use_cnn
        self.steps = steps
        self.learning_rate = learning_rate
        self.patience = patience
        self.random_state = random_state

    def _config(self) -> ModelConfig:
        return ModelConfig(pvt_depths=tuple(self.pvt_depths), use_pvt=self.use_pvt, use_cnn=self.use_cnn)

    def fit(self, X, y):
        X = check_frames(X)
        y = check_targets(y, X)
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        model = build_model(self._config(), seed=self.random_state)
        opt = Adamax(model.named_parameters(), self.learning_rate)
        sched = PlateauSchedule(lr=self.learning_rate, patience=self.patience)
        rng = np.random.default_rng(self.random_state)
        self.loss_curve_ = []
        order, epoch_losses = [], []
        for step in range(1, self.steps + 1):
            if not order:
                order = list(rng.permutation(X.shape[0]))
            i = order.pop()
            loss = l1_loss(model.forward([Tensor(f) for f in X[i]]), y[i])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"loss diverged at step {step}")
            opt.zero_grad()
            backward(loss)
            try:
                opt.step()
            except NumericError as exc:
                raise TrainingError(f"step {step}: {exc}") from exc
            self.loss_curve_.append(value)
            epoch_losses.append(value)
            if not order:
                opt.lr = sched.update(-float(np.mean(epoch_losses)))
                epoch_losses = []
        self.model_ = model
        self.n_steps_ = self.steps
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_frames(X)
        return np.stack([self.model_.predict(list(seq)) for seq in X])

    def score(self, X, y, sample_weight=None) -> float:
        X = check_frames(X)
        y = check_targets(y, X)
        pred = self.predict(X)
        scores = np.array([psnr(p, t) for p, t in zip(pred, y)])
        return float(np.average(scores, weights=sample_weight))
