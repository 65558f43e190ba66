"""The dual-encoder interpolation network: configuration, assembly and forward passes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .decoder import Decoder
from .encoders import CnnEncoder, CnnEncoderState, PvtEncoder, PvtFeatures, PvtStageConfig
from .errors import ConfigError, DimensionError
from .layers import Module
from .nn import avg_pool2d
from .synthesis import SynthesisBlock
from .tensor import Tensor, concat, getitem, memory, no_grad, pad_reflect, zeros


@dataclass(frozen=True)
class ModelConfig:
    pvt_depths: tuple[int, int] = (9, 12)
    pvt_dims: tuple[int, int] = (64, 128)
    sr_ratios: tuple[int, int] = (16, 8)
    num_heads: tuple[int, int] = (1, 2)
    mlp_ratio: int = 4
    cnn_channels: tuple[int, int, int] = (32, 64, 128)
    kernel_size: int = 5
    input_frames: int = 4
    leaky_slope: float = 0.1
    use_pvt: bool = True
    use_cnn: bool = True

    def __post_init__(self):
        for name in ("pvt_depths", "pvt_dims", "sr_ratios", "num_heads", "cnn_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self) -> "ModelConfig":
        if not (self.use_pvt or self.use_cnn):
            raise ConfigError("at least one of use_pvt / use_cnn must be enabled")
        if self.input_frames != 4:
            raise ConfigError(f"input_frames must be 4, got {self.input_frames}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.use_pvt and self.use_cnn and tuple(self.cnn_channels[1:]) != tuple(self.pvt_dims):
            raise ConfigError(f"cnn_channels {self.cnn_channels} must end with pvt_dims {self.pvt_dims}")
        if self.use_pvt:
            self.stage_configs()
        return self

    def stage_configs(self) -> tuple[PvtStageConfig, PvtStageConfig]:
        d, s, h = self.pvt_depths, self.sr_ratios, self.num_heads
        return (
            PvtStageConfig(self.pvt_dims[0], d[0], s[0], h[0], self.mlp_ratio, patch_stride=4),
            PvtStageConfig(self.pvt_dims[1], d[1], s[1], h[1], self.mlp_ratio, patch_stride=2),
        )

    @property
    def feature_channels(self) -> tuple[int, int]:
        """Channel counts of the fusion levels at 1/4 and 1/8 resolution."""
        return tuple(self.cnn_channels[1:]) if self.use_cnn else tuple(self.pvt_dims)

    @property
    def pad_multiple(self) -> int:
        """Spatial sizes are padded to a multiple of this so every stride and reduction divides."""
        m = 16
        if self.use_pvt:
            m = math.lcm(m, 4 * self.sr_ratios[0], 8 * self.sr_ratios[1])
        return m

    def to_text(self) -> str:
        lines = []
        for key, val in asdict(self).items():
            if isinstance(val, (tuple, list)):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        values = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"malformed config line {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(defaults, key)
            try:
                if isinstance(current, bool):
                    if val not in ("true", "false"):
                        raise ValueError(val)
                    values[key] = val == "true"
                elif isinstance(current, tuple):
                    values[key] = tuple(int(v) for v in val.split(","))
                elif isinstance(current, float):
                    values[key] = float(val)
                else:
                    values[key] = int(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        return cls(**values).validate()


def _pads(n: int, multiple: int) -> tuple[int, int]:
    extra = -n % multiple
    return extra // 2, extra - extra // 2


class EdenVFI(Module):
    """Transformer + CNN encoders, additive-fusion decoder and deformable separable synthesis."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        cin = 3 * cfg.input_frames
        slope = cfg.leaky_slope
        c64, c128 = cfg.feature_channels
        self.pvt = PvtEncoder(cfg.stage_configs(), cin, rng=rng, dtype=dtype) if cfg.use_pvt else None
        self.cnn = CnnEncoder(cin, cfg.cnn_channels, slope, rng=rng, dtype=dtype) if cfg.use_cnn else None
        self.decoder = Decoder(c64, c128, slope, rng=rng, dtype=dtype)
        self.synthesis = SynthesisBlock(c64, cfg.input_frames, cfg.kernel_size, 3, slope, rng=rng, dtype=dtype)

    @property
    def dtype(self):
        return self.synthesis.bias.conv2.weight.dtype

    def _check_frames(self, frames: Sequence) -> tuple[int, int]:
        if len(frames) != self.cfg.input_frames:
            raise DimensionError(f"expected {self.cfg.input_frames} frames, got {len(frames)}")
        shape = frames[0].shape
        if len(shape) != 3 or shape[0] != 3:
            raise DimensionError(f"frames must be [3 x H x W], got {shape}")
        for f in frames:
            if f.shape != shape:
                raise DimensionError(f"frame sizes differ: {f.shape} vs {shape}")
        return shape[1], shape[2]

    def features(self, x: Tensor) -> Tensor:
        """Run encoders and decoder on the 12-channel padded input; returns phi64."""
        _, h, w = x.shape
        c64, c128 = self.cfg.feature_channels
        dt = x.dtype
        pvt = self.pvt(x) if self.pvt is not None else None
        if self.cnn is not None:
            cnn = self.cnn(x)
        else:
            cnn = CnnEncoderState(None, zeros((c64, h // 4, w // 4), dt), zeros((c128, h // 8, w // 8), dt),
                                  avg_pool2d(pvt.beta128, 2))
        if pvt is None:
            pvt = PvtFeatures(zeros(cnn.level64.shape, dt), zeros(cnn.level128.shape, dt))
        return self.decoder(cnn.rho, cnn, pvt)

    def forward(self, frames: Sequence[Tensor]) -> Tensor:
        """Differentiable forward of four ``[3 x H x W]`` frames; output is not clamped."""
        h, w = self._check_frames(frames)
        m = self.cfg.pad_multiple
        (top, bottom), (left, right) = _pads(h, m), _pads(w, m)
        padded = [pad_reflect(f, top, bottom, left, right) for f in frames]
        phi64 = self.features(concat(padded, axis=0))
        out = self.synthesis(phi64, padded)
        if top or bottom or left or right:
            out = getitem(out, (slice(None), slice(top, top + h), slice(left, left + w)))
        return out

    def predict(self, frames: Sequence[np.ndarray], clamp: bool = True) -> np.ndarray:
        """Gradient-free, memory-bounded forward on numpy frames; clamps to [0, 1] by default."""
        h, w = self._check_frames(frames)
        m = self.cfg.pad_multiple
        (top, bottom), (left, right) = _pads(h, m), _pads(w, m)
        with no_grad():
            padded = [pad_reflect(Tensor(np.asarray(f, dtype=self.dtype)), top, bottom, left, right)
                      for f in frames]
            stacked = np.stack([p.data for p in padded])
            memory.register(stacked)
            phi64 = self.features(concat(padded, axis=0)).data
            del padded
            out = self.synthesis.infer(phi64, stacked)
        out = out[:, top:top + h, left:left + w]
        return np.clip(out, 0.0, 1.0) if clamp else out


def build_model(cfg: ModelConfig | None = None, seed: int = 0, dtype=np.float32) -> EdenVFI:
    """Construct and initialize a model; identical ``(cfg, seed)`` give identical parameters."""
    cfg = cfg if cfg is not None else ModelConfig()
    return EdenVFI(cfg, np.random.default_rng(seed), dtype)


def count_parameters(model: Module) -> int:
    return sum(p.size for p in model.parameters())
