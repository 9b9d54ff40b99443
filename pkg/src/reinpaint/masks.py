"""Mask sampling protocols: freeform strokes, ratio buckets, center rectangle.

All samplers return float32 tensors shaped ``(1, R, R)`` holding exactly 0.0
(known) and 1.0 (unknown), matching the on-disk convention in
:mod:`reinpaint.core`.

Freeform parameterization (stated at a 256 px canvas; pixel sizes rescale
linearly with resolution):

* with probability 1/32 the mask is fully empty (ratio 0) — kept rare but
  legal so training sees the no-op case;
* otherwise 1-8 brush strokes, width 8-40 px, each a random walk of 3-8
  segments of length 16-56 px whose heading perturbs by up to ±1.1 rad per
  segment, drawn with round caps;
* plus 0-3 axis-aligned rectangles (counts weighted 55/27/12/6 %), each side
  30-60 % of the resolution, placed uniformly inside the canvas;
* if the composition covers more than 70 % of the canvas, elements are pruned
  (rectangles last-first, then strokes last-first) until coverage is <= 0.70,
  so the sampler's ratio range is [0, 0.7] by construction.

Draw order is part of the sampler's identity: empty-event, strokes (per
stroke: width, start, segment count, then per-segment heading/length), then
rectangles.  Reordering draws would silently change every seeded mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
import torch

from .errors import ContractError, MaskGenerationError
from .seeding import derive_seed, numpy_generator

MASK_KINDS = ("freeform", "ratio_bucket", "center_rect", "empty")

EMPTY_MASK_PROBABILITY = 1.0 / 32.0
RATIO_BUCKET_MAX_ATTEMPTS = 10_000
FREEFORM_RATIO_CAP = 0.70


@dataclass(frozen=True)
class MaskSpec:
    """Declarative request for one mask."""

    kind: str
    resolution: int
    seed: int = 0
    ratio_bucket: tuple[float, float] | None = None

    def validate(self) -> None:
        if self.kind not in MASK_KINDS:
            raise ContractError(f"unknown mask kind {self.kind!r}; expected one of {MASK_KINDS}")
        if self.resolution < 8:
            raise ContractError(f"resolution must be >= 8, got {self.resolution}")
        if self.kind == "center_rect" and self.resolution % 2 != 0:
            raise ContractError("center_rect requires an even resolution for an exact 0.25 ratio")
        if self.kind == "ratio_bucket":
            if self.ratio_bucket is None:
                raise ContractError("ratio_bucket kind requires a (low, high] bucket")
            low, high = self.ratio_bucket
            if not (0.0 <= low < high <= 1.0):
                raise ContractError(f"bucket must satisfy 0 <= low < high <= 1, got {self.ratio_bucket}")
        elif self.ratio_bucket is not None:
            raise ContractError(f"kind {self.kind!r} does not take a ratio bucket")


def mask_ratio(mask: torch.Tensor) -> float:
    """Fraction of unknown (1.0) pixels."""
    if not torch.logical_or(mask == 0.0, mask == 1.0).all():
        raise ContractError("mask_ratio: mask must be binary")
    return float(mask.mean())


def empty_mask(resolution: int) -> torch.Tensor:
    return torch.zeros(1, resolution, resolution)


def center_rect_mask(resolution: int) -> torch.Tensor:
    """Centered (R/2)x(R/2) square of unknown pixels; ratio exactly 0.25."""
    if resolution < 2 or resolution % 2 != 0:
        raise ContractError(f"center_rect_mask requires an even resolution >= 2, got {resolution}")
    side = resolution // 2
    start = (resolution - side) // 2
    mask = torch.zeros(1, resolution, resolution)
    mask[:, start : start + side, start : start + side] = 1.0
    return mask


def _render_elements(elements: list, resolution: int) -> np.ndarray:
    canvas = np.zeros((resolution, resolution), dtype=np.uint8)
    for kind, payload in elements:
        if kind == "stroke":
            width, points = payload
            for p0, p1 in zip(points, points[1:]):
                cv2.line(canvas, p0, p1, 255, thickness=width)
                cv2.circle(canvas, p1, width // 2, 255, thickness=-1)  # round cap
        else:
            left, top, right, bottom = payload
            cv2.rectangle(canvas, (left, top), (right, bottom), 255, thickness=-1)
    return canvas


def generate_freeform_mask(resolution: int, seed: int) -> torch.Tensor:
    """Seeded freeform stroke+rectangle mask (see module docstring)."""
    if resolution < 8:
        raise ContractError(f"resolution must be >= 8, got {resolution}")
    rng = numpy_generator(seed, "mask")
    if rng.random() < EMPTY_MASK_PROBABILITY:
        return empty_mask(resolution)

    scale = resolution / 256.0

    def clip(v: float, limit: int) -> int:
        return int(min(max(v, 0), limit - 1))

    elements: list = []
    stroke_count = int(rng.integers(1, 9))
    for _ in range(stroke_count):
        width = max(1, int(round(int(rng.integers(8, 41)) * scale)))
        x = float(rng.uniform(0, resolution))
        y = float(rng.uniform(0, resolution))
        angle = float(rng.uniform(0, 2 * math.pi))
        segments = int(rng.integers(3, 9))
        points = [(clip(x, resolution), clip(y, resolution))]
        for _ in range(segments):
            angle += float(rng.uniform(-1.1, 1.1))
            length = float(rng.uniform(16, 56)) * scale
            x = x + length * math.cos(angle)
            y = y + length * math.sin(angle)
            x, y = float(clip(x, resolution)), float(clip(y, resolution))
            points.append((int(x), int(y)))
        elements.append(("stroke", (width, points)))

    rect_count = int(rng.choice(4, p=[0.55, 0.27, 0.12, 0.06]))
    for _ in range(rect_count):
        h = int(round(float(rng.uniform(0.30, 0.60)) * resolution))
        w = int(round(float(rng.uniform(0.30, 0.60)) * resolution))
        top = int(rng.integers(0, max(resolution - h, 0) + 1))
        left = int(rng.integers(0, max(resolution - w, 0) + 1))
        elements.append(("rect", (left, top, left + w - 1, top + h - 1)))

    canvas = _render_elements(elements, resolution)
    # structural coverage cap: prune trailing elements until ratio <= 0.70
    while (canvas != 0).mean() > FREEFORM_RATIO_CAP and elements:
        elements.pop()
        canvas = _render_elements(elements, resolution)

    return torch.from_numpy((canvas != 0)).float().unsqueeze(0)


def generate_ratio_mask(
    resolution: int,
    bucket: tuple[float, float],
    seed: int,
    max_attempts: int = RATIO_BUCKET_MAX_ATTEMPTS,
) -> torch.Tensor:
    """Rejection-sample freeform masks until the ratio lands in ``(low, high]``."""
    low, high = bucket
    if not (0.0 <= low < high <= 1.0):
        raise ContractError(f"bucket must satisfy 0 <= low < high <= 1, got {bucket}")
    for attempt in range(max_attempts):
        mask = generate_freeform_mask(resolution, derive_seed(seed, attempt))
        ratio = mask_ratio(mask)
        if low < ratio <= high:
            return mask
    raise MaskGenerationError(
        f"no freeform mask with ratio in ({low}, {high}] after {max_attempts} attempts "
        f"at resolution {resolution}; the requested bucket is outside the sampler's range"
    )


def generate_mask(spec: MaskSpec) -> torch.Tensor:
    """Dispatch on :class:`MaskSpec`; deterministic given the spec."""
    spec.validate()
    if spec.kind == "freeform":
        return generate_freeform_mask(spec.resolution, spec.seed)
    if spec.kind == "ratio_bucket":
        assert spec.ratio_bucket is not None  # validate() guarantees this
        return generate_ratio_mask(spec.resolution, spec.ratio_bucket, spec.seed)
    if spec.kind == "center_rect":
        return center_rect_mask(spec.resolution)
    return empty_mask(spec.resolution)
