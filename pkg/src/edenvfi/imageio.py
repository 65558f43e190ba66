"""8-bit PNG / binary-PPM reading and writing, and quadruplet directories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError

INPUT_NAMES = ("in0", "in1", "in2", "in3")
GT_NAME = "gt"
SUFFIXES = (".png", ".ppm")


class ImageFormatError(DimensionError):
    """Image files that cannot be combined (e.g. mismatched sizes)."""


def read_image(path) -> np.ndarray:
    """Decode an 8-bit RGB image to a float32 ``[3 x H x W]`` array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path.name} not found")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write ``[3 x H x W]`` values (clamped to [0, 1]) as PNG or binary PPM, by extension."""
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image extension {path.suffix!r} (use .png or .ppm)")
    Image.fromarray(to_uint8(img).transpose(1, 2, 0), "RGB").save(path, format=fmt)


def _find(directory: Path, stem: str) -> Path:
    for suffix in SUFFIXES:
        p = directory / f"{stem}{suffix}"
        if p.is_file():
            return p
    raise FileNotFoundError(f"{stem}.png not found in {directory}")


@dataclass
class QuadrupletRecord:
    directory: Path
    input_paths: list[Path]
    gt_path: Path
    frames: list[np.ndarray]
    gt: np.ndarray


def load_quadruplet(directory) -> QuadrupletRecord:
    """Load ``in0..in3`` and ``gt`` (``.png`` or ``.ppm``) from ``directory``."""
    directory = Path(directory)
    inputs = [_find(directory, n) for n in INPUT_NAMES]
    gt_path = _find(directory, GT_NAME)
    frames = [read_image(p) for p in inputs]
    gt = read_image(gt_path)
    for p, img in zip([*inputs, gt_path], [*frames, gt]):
        if img.shape != gt.shape:
            raise ImageFormatError(f"{p.name} is {img.shape[2]}x{img.shape[1]}, expected {gt.shape[2]}x{gt.shape[1]}")
    return QuadrupletRecord(directory, inputs, gt_path, frames, gt)


def is_quadruplet_dir(directory) -> bool:
    directory = Path(directory)
    return any((directory / f"{GT_NAME}{s}").is_file() for s in SUFFIXES)


def find_quadruplets(root) -> list[Path]:
    """``root`` itself if it holds a quadruplet, else its sub-directories that do (sorted)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} not found")
    if is_quadruplet_dir(root):
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and is_quadruplet_dir(p))
