"""
Synthetic sequences with exact ground truth.

A solid rectangle moves at constant velocity over a static blurred-noise
background and bounces off the frame edges. Every random draw comes from one
`numpy` generator seeded with `seed + index`, so a sequence is a pure function
of its config and index.
"""

import logging
from typing import List, Tuple

import cv2
import numpy as np

from .config import SynthConfig
from .errors import InvalidArgumentError
from .geometry import BoundingBox
from .load_sequences import SequenceRecord

logger = logging.getLogger(__name__)

BACKGROUND_BLUR_SIGMA = 3.0


def _draw_color(rng: np.random.Generator) -> Tuple[int, int, int]:
    # each channel is pushed towards 0 or 255 so the object stands out of the mid-gray texture
    high = rng.integers(0, 2, size=3)
    jitter = rng.integers(0, 64, size=3)
    return tuple(int(value) for value in np.where(high, 255 - jitter, jitter))


def _background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    noise = rng.integers(0, 256, size=(height, width, 3)).astype(np.float32)
    blurred = cv2.GaussianBlur(noise, (0, 0), BACKGROUND_BLUR_SIGMA)
    stretched = (blurred - blurred.mean()) * 4.0 + 128.0
    return np.clip(np.rint(stretched), 0, 255).astype(np.uint8)


def bounce(position: float, velocity: float, limit: float) -> Tuple[float, float]:
    """Advance one frame along an axis, reflecting off 0 and `limit`."""
    position += velocity
    if limit <= 0:
        return 0.0, velocity
    while position < 0 or position > limit:
        if position < 0:
            position = -position
        else:
            position = 2 * limit - position
        velocity = -velocity
    return position, velocity


def synth_trajectory(cfg: SynthConfig, start, velocity, size) -> List[Tuple[int, int]]:
    width, height = size
    x_limit = cfg.frame_width - width
    y_limit = cfg.frame_height - height
    x, y = float(start[0]), float(start[1])
    vx, vy = float(velocity[0]), float(velocity[1])
    positions = []
    for _ in range(cfg.length):
        positions.append((int(np.floor(x + 0.5)), int(np.floor(y + 0.5))))
        x, vx = bounce(x, vx, x_limit)
        y, vy = bounce(y, vy, y_limit)
    return positions


def synth_sequence(cfg: SynthConfig, index: int = 0) -> SequenceRecord:
    """
    Render sequence `index` of the family described by `cfg`.

    Args:
        cfg (SynthConfig): family parameters; fields that are set pin the
            corresponding random draw.
        index (int): sequence number; the generator is seeded with `cfg.seed + index`.

    Returns:
        SequenceRecord: in-memory frames with exact annotations, all visible.
    """
    rng = np.random.default_rng(cfg.seed + index)

    if cfg.object_size is not None:
        size = tuple(int(value) for value in cfg.object_size)
    else:
        low, high = (int(value) for value in cfg.object_size_range)
        size = tuple(int(value) for value in rng.integers(low, high + 1, size=2))
    width, height = size
    if width < 1 or height < 1 or width > cfg.frame_width or height > cfg.frame_height:
        raise InvalidArgumentError(
            f"object {width}x{height} does not fit a {cfg.frame_width}x{cfg.frame_height} frame"
        )

    if cfg.velocity is not None:
        velocity = tuple(float(value) for value in cfg.velocity)
    else:
        velocity = tuple(float(value) for value in rng.uniform(*cfg.velocity_range, size=2))

    if cfg.start is not None:
        start = tuple(int(value) for value in cfg.start)
        if start[0] + width > cfg.frame_width or start[1] + height > cfg.frame_height:
            raise InvalidArgumentError(f"start {start} puts the object outside the frame")
    else:
        start = (
            int(rng.integers(0, cfg.frame_width - width + 1)),
            int(rng.integers(0, cfg.frame_height - height + 1)),
        )

    color = tuple(cfg.color) if cfg.color is not None else _draw_color(rng)
    background = _background(rng, cfg.frame_width, cfg.frame_height)

    frames, annotations = [], []
    for x, y in synth_trajectory(cfg, start, velocity, size):
        frame = background.astype(np.float32)
        frame[y:y + height, x:x + width] = color
        if cfg.noise_sigma > 0:
            frame += rng.normal(0.0, cfg.noise_sigma, size=frame.shape).astype(np.float32)
        frames.append(np.clip(np.rint(frame), 0, 255).astype(np.uint8))
        annotations.append(BoundingBox(float(x), float(y), float(x + width), float(y + height)))

    logger.debug(
        "synth sequence %d: size %s, start %s, velocity %s, color %s",
        index, size, start, velocity, color,
    )
    return SequenceRecord(name=f"synth_{index:04d}", frames=frames, annotations=annotations)


def synth_dataset(cfg: SynthConfig) -> List[SequenceRecord]:
    return [synth_sequence(cfg, index) for index in range(cfg.sequences)]
