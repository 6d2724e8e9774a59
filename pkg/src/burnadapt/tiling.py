"""Sliding-window full-scene inference with logit averaging, plus the
TP/FP/FN error-map writer.

Window logits accumulate in float64 so results cannot depend on visitation
order at float32 precision; prediction is the per-pixel argmax of the
averaged logits (ties go to unburned).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, DataError, DimensionError


@dataclass(frozen=True)
class TileJob:
    window: int = 128
    stride: int = 32

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ConfigurationError("window and stride must be >= 1")
        if self.stride > self.window:
            raise ConfigurationError(
                f"stride {self.stride} must not exceed window {self.window}")


def _axis_starts(extent: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    last = extent - window
    if starts[-1] != last:
        starts.append(last)  # flush-to-edge final window
    return starts


def tile_origins(height: int, width: int, window: int,
                 stride: int) -> list[tuple[int, int]]:
    """Row-major window origins covering the scene, duplicate-free, with a
    flush-to-edge final row/column when the stride does not tile exactly."""
    if window < 1 or stride < 1:
        raise ConfigurationError("window and stride must be >= 1")
    if height < window or width < window:
        raise DataError(
            f"scene {height}x{width} is smaller than the {window}px window")
    rows = _axis_starts(height, window, stride)
    cols = _axis_starts(width, window, stride)
    return [(r, c) for r in rows for c in cols]


def coverage_counts(height: int, width: int, job: TileJob) -> np.ndarray:
    """How many windows cover each pixel."""
    count = np.zeros((height, width), dtype=np.int64)
    for r, c in tile_origins(height, width, job.window, job.stride):
        count[r:r + job.window, c:c + job.window] += 1
    return count


def infer_scene(model_fn, scene, job: TileJob = TileJob()):
    """Average window logits over a full scene.

    ``model_fn`` maps (pre_patch [3,w,w], post_patch [3,w,w]) -> logits
    [2,w,w] as numpy arrays. Returns (averaged logits float64 [2,H,W],
    predicted mask uint8 [H,W]).
    """
    h, w = scene.height, scene.width
    win = job.window
    sum_logits = np.zeros((2, h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    for r, c in tile_origins(h, w, win, job.stride):
        pre = scene.pre[:, r:r + win, c:c + win]
        post = scene.post[:, r:r + win, c:c + win]
        logits = np.asarray(model_fn(pre, post), dtype=np.float64)
        if logits.shape != (2, win, win):
            raise DimensionError(
                f"model returned {logits.shape}, expected (2, {win}, {win})")
        sum_logits[:, r:r + win, c:c + win] += logits
        count[r:r + win, c:c + win] += 1
    if np.any(count == 0):
        raise ContractError("coverage hole: some pixels saw no window")
    avg = sum_logits / count
    pred = (avg[1] > avg[0]).astype(np.uint8)
    return avg, pred


# error-map palette: TP green, FP red, FN white, TN black
_PALETTE = {
    "tp": (0, 255, 0),
    "fp": (255, 0, 0),
    "fn": (255, 255, 255),
    "tn": (0, 0, 0),
}


def error_map_image(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred).astype(bool)
    target = np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise DimensionError(
            f"pred shape {pred.shape} != target shape {target.shape}")
    img = np.zeros((*pred.shape, 3), dtype=np.uint8)
    img[pred & target] = _PALETTE["tp"]
    img[pred & ~target] = _PALETTE["fp"]
    img[~pred & target] = _PALETTE["fn"]
    return img


def write_ppm(img: np.ndarray, path) -> None:
    """Binary portable pixel map (P6)."""
    h, w, _ = img.shape
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_pgm(mask: np.ndarray, path) -> None:
    """Binary portable gray map (P5); mask {0,1} stored as {0,255}."""
    arr = (np.asarray(mask).astype(np.uint8) * 255)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 mask back to {0,1}."""
    from .errors import FormatError

    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError(f"not a binary PGM: {path}")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)
    return (data > 0).astype(np.uint8)


def emit_error_map(pred: np.ndarray, target: np.ndarray, path) -> None:
    """Write the TP/FP/FN/TN color map as a P6 PPM."""
    write_ppm(error_map_image(pred, target), path)
