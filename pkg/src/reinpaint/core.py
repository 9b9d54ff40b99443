"""Core image/mask tensor conventions and the residual compositing rule.

Conventions used everywhere else in the package:

* images are float32 torch tensors shaped ``(3, H, W)`` or ``(B, 3, H, W)``
  with values in ``[-1, 1]`` (uint8 ``v`` maps to ``v / 127.5 - 1``);
* masks are float32 tensors shaped ``(1, H, W)`` or ``(B, 1, H, W)`` holding
  exactly ``0.0`` (known pixel) or ``1.0`` (unknown / to be filled);
* on disk, masks are 8-bit grayscale PNGs where any nonzero value is unknown.

The one piece of actual math here is :func:`composite_step`: each reasoning
step predicts a residual for the full frame, but only masked pixels are
updated; known pixels are copied from the masked input verbatim so they stay
bit-exact across any number of steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ContractError

VALUE_MIN = -1.0
VALUE_MAX = 1.0


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def _check_image(tensor: torch.Tensor, name: str) -> None:
    if not isinstance(tensor, torch.Tensor):
        raise ContractError(f"{name} must be a torch.Tensor, got {type(tensor)!r}")
    if tensor.dim() not in (3, 4) or tensor.shape[-3] != 3:
        raise ContractError(
            f"{name} must be shaped (3,H,W) or (B,3,H,W), got {tuple(tensor.shape)}"
        )


def _check_mask(mask: torch.Tensor, name: str = "mask") -> None:
    if not isinstance(mask, torch.Tensor):
        raise ContractError(f"{name} must be a torch.Tensor, got {type(mask)!r}")
    if mask.dim() not in (3, 4) or mask.shape[-3] != 1:
        raise ContractError(
            f"{name} must be shaped (1,H,W) or (B,1,H,W), got {tuple(mask.shape)}"
        )
    if not torch.logical_or(mask == 0.0, mask == 1.0).all():
        raise ContractError(f"{name} must contain only 0.0 and 1.0 values")


def _check_same_spatial(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise ContractError(
            f"{what}: spatial sizes differ, {tuple(a.shape[-2:])} vs {tuple(b.shape[-2:])}"
        )


# ---------------------------------------------------------------------------
# image / mask IO
# ---------------------------------------------------------------------------


def load_image(path: str, resolution: int) -> torch.Tensor:
    """Load an RGB image as a ``(3, R, R)`` float tensor in ``[-1, 1]``.

    Non-RGB inputs are converted with a warning (grayscale is replicated to
    three channels).  Off-size inputs are resized with bilinear interpolation
    (no antialiasing, ``align_corners=False``).
    """
    if resolution < 1:
        raise ContractError(f"resolution must be positive, got {resolution}")
    with Image.open(path) as img:
        if img.mode != "RGB":
            warnings.warn(
                f"{path}: mode {img.mode} converted to RGB", stacklevel=2
            )
            img = img.convert("RGB")
        array = np.asarray(img, dtype=np.uint8).copy()
    tensor = torch.from_numpy(array).permute(2, 0, 1).float() / 127.5 - 1.0
    if tensor.shape[-2:] != (resolution, resolution):
        tensor = F.interpolate(
            tensor.unsqueeze(0),
            size=(resolution, resolution),
            mode="bilinear",
            align_corners=False,
            antialias=False,
        ).squeeze(0)
    return tensor.clamp(VALUE_MIN, VALUE_MAX)


def save_image(tensor: torch.Tensor, path: str) -> None:
    """Write a ``(3, H, W)`` tensor in ``[-1, 1]`` as an 8-bit RGB PNG."""
    _check_image(tensor, "tensor")
    if tensor.dim() != 3:
        raise ContractError("save_image expects a single (3,H,W) image")
    if not torch.isfinite(tensor).all():
        raise ContractError("save_image: tensor contains non-finite values")
    array = tensor_to_uint8(tensor)
    Image.fromarray(array, mode="RGB").save(path)


def tensor_to_uint8(tensor: torch.Tensor) -> np.ndarray:
    """Map ``(3, H, W)`` in ``[-1, 1]`` to an ``(H, W, 3)`` uint8 array."""
    clipped = tensor.detach().clamp(VALUE_MIN, VALUE_MAX)
    scaled = (clipped + 1.0) * 127.5
    return scaled.round().to(torch.uint8).permute(1, 2, 0).numpy()


def load_mask(path: str, resolution: int) -> torch.Tensor:
    """Load a ``(1, R, R)`` binary mask; nonzero pixels are unknown (1.0)."""
    if resolution < 1:
        raise ContractError(f"resolution must be positive, got {resolution}")
    with Image.open(path) as img:
        array = np.asarray(img.convert("L"), dtype=np.uint8)
    mask = torch.from_numpy((array != 0)).float().unsqueeze(0)
    if mask.shape[-2:] != (resolution, resolution):
        # nearest keeps values binary through the resize
        mask = F.interpolate(
            mask.unsqueeze(0), size=(resolution, resolution), mode="nearest"
        ).squeeze(0)
    return mask


def save_mask(mask: torch.Tensor, path: str) -> None:
    """Write a binary mask as an 8-bit grayscale PNG (0 known / 255 unknown)."""
    _check_mask(mask)
    if mask.dim() != 3:
        raise ContractError("save_mask expects a single (1,H,W) mask")
    array = (mask.detach()[0].numpy() * 255).astype(np.uint8)
    Image.fromarray(array, mode="L").save(path)


# ---------------------------------------------------------------------------
# masking and compositing
# ---------------------------------------------------------------------------


def apply_mask(ground_truth: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero out masked pixels: ``ground_truth * (1 - mask)``.

    Masked pixels come out exactly 0.0; known pixels are untouched.
    """
    _check_image(ground_truth, "ground_truth")
    _check_mask(mask)
    _check_same_spatial(ground_truth, mask, "apply_mask")
    if ground_truth.dim() != mask.dim():
        raise ContractError(
            "apply_mask: ground_truth and mask must both be batched or both unbatched"
        )
    return ground_truth * (1.0 - mask)


def composite_step(
    prev_output: torch.Tensor,
    residual: torch.Tensor,
    mask: torch.Tensor,
    masked_input: torch.Tensor,
) -> torch.Tensor:
    """One residual-reasoning composite.

    Inside the mask the result is ``clamp(prev_output + residual, -1, 1)``;
    outside it is ``masked_input`` copied bit-exactly (``torch.where``, not a
    blend, so known pixels can never drift over repeated steps).
    """
    for name, t in (
        ("prev_output", prev_output),
        ("residual", residual),
        ("masked_input", masked_input),
    ):
        _check_image(t, name)
        if t.shape != prev_output.shape:
            raise ContractError(
                f"composite_step: {name} shape {tuple(t.shape)} != "
                f"prev_output shape {tuple(prev_output.shape)}"
            )
    _check_mask(mask)
    _check_same_spatial(prev_output, mask, "composite_step")
    if prev_output.dim() != mask.dim():
        raise ContractError(
            "composite_step: images and mask must both be batched or both unbatched"
        )
    filled = (prev_output + residual).clamp(VALUE_MIN, VALUE_MAX)
    return torch.where(mask > 0.5, filled, masked_input)


@dataclass
class MaskedSample:
    """A ground-truth image, its mask, and the zero-filled masked input."""

    ground_truth: torch.Tensor
    mask: torch.Tensor
    masked_input: torch.Tensor

    @classmethod
    def create(cls, ground_truth: torch.Tensor, mask: torch.Tensor) -> "MaskedSample":
        return cls(ground_truth, mask, apply_mask(ground_truth, mask))

    def validate(self) -> None:
        _check_image(self.ground_truth, "ground_truth")
        _check_mask(self.mask)
        _check_image(self.masked_input, "masked_input")
        if self.ground_truth.shape != self.masked_input.shape:
            raise ContractError("MaskedSample: ground_truth/masked_input shape mismatch")
        _check_same_spatial(self.ground_truth, self.mask, "MaskedSample")
        known = self.mask <= 0.5
        if not torch.equal(
            self.masked_input * known, self.ground_truth * known
        ):
            raise ContractError("MaskedSample: known pixels differ from ground truth")
        if not (self.masked_input * ~known == 0).all():
            raise ContractError("MaskedSample: masked pixels of masked_input not zero")


@dataclass
class ResidualTrace:
    """Per-step residuals and composites from an iterative inpainting run."""

    masked_input: torch.Tensor
    mask: torch.Tensor
    residuals: list[torch.Tensor] = field(default_factory=list)
    outputs: list[torch.Tensor] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.outputs)

    @property
    def final(self) -> torch.Tensor:
        if not self.outputs:
            raise ContractError("ResidualTrace has no steps")
        return self.outputs[-1]

    def validate(self) -> None:
        if len(self.residuals) != len(self.outputs):
            raise ContractError("ResidualTrace: residual/output count mismatch")
        known = self.mask <= 0.5
        for i, out in enumerate(self.outputs):
            if out.shape != self.masked_input.shape:
                raise ContractError(f"ResidualTrace: step {i} output shape mismatch")
            if not torch.equal(out * known, self.masked_input * known):
                raise ContractError(f"ResidualTrace: step {i} mutated known pixels")


def residual_heatmap(residual: torch.Tensor) -> torch.Tensor:
    """Render a residual as an RGB heat map in ``[-1, 1]``.

    Magnitude is the channel-mean absolute residual, normalized to its own
    per-image maximum; the color ramp runs blue (0) -> red (max).  An all-zero
    residual renders as pure blue.
    """
    _check_image(residual, "residual")
    magnitude = residual.detach().abs().mean(dim=-3, keepdim=True)
    peak = magnitude.amax(dim=(-2, -1), keepdim=True)
    value = torch.where(peak > 0, magnitude / peak.clamp(min=1e-12), torch.zeros_like(magnitude))
    red = value
    green = torch.zeros_like(value)
    blue = 1.0 - value
    rgb_unit = torch.cat([red, green, blue], dim=-3)
    return rgb_unit * 2.0 - 1.0
