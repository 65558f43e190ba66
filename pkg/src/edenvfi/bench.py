"""Runtime and peak tensor-memory measurement of the inference path."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError
from .model import EdenVFI
from .tensor import memory


@dataclass
class BenchReport:
    width: int
    height: int
    runs: int
    mean_s: float
    std_s: float
    peak_bytes: int
    samples: list[float] = field(default_factory=list, repr=False)

    def text(self) -> str:
        return (
            f"frame size   {self.width}x{self.height}\n"
            f"runs         {self.runs}\n"
            f"runtime (s)  {self.mean_s:.4f} +/- {self.std_s:.4f}\n"
            f"memory (MB)  {self.peak_bytes / 2**20:.1f}"
        )

    def csv(self) -> str:
        return f"{self.width},{self.height},{self.runs},{self.mean_s:.6f},{self.std_s:.6f},{self.peak_bytes}"


CSV_HEADER = "width,height,runs,mean_s,std_s,peak_bytes"


def benchmark(model: EdenVFI, width: int, height: int, runs: int = 3, seed: int = 0,
              forward: Callable | None = None) -> BenchReport:
    """One warm-up plus ``runs`` timed forwards on random frames.

    Peak memory is the tensor-buffer high-water mark during the warm-up
    forward.  ``forward`` replaces ``model.predict`` (used for instrumentation).
    """
    if runs < 3:
        raise ContractError(f"runs must be >= 3, got {runs}")
    forward = forward if forward is not None else model.predict
    rng = np.random.default_rng(seed)
    frames = [rng.random((3, height, width), dtype=np.float32) for _ in range(4)]

    memory.reset_peak()
    forward(frames)
    peak = memory.peak_bytes

    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        forward(frames)
        samples.append(time.perf_counter() - t0)
    return BenchReport(width, height, runs, statistics.fmean(samples), statistics.pstdev(samples), peak, samples)
