"""Receptive-field geometry and patch label maps.

A stack of conv layers maps an input image to an ``h' x w'`` grid of patch
scores.  Each output unit (i, j) sees a square *footprint* of input pixels.
Tracking three integers through the stack (processed last layer -> first,
starting from (size=1, stride=1, offset=0)) gives the exact footprint:

    size   <- (size - 1) * stride_l + dilated_kernel_l
    stride <- stride * stride_l
    offset <- offset * stride_l - padding_l

so unit ``u`` along one axis covers input columns
``[stride*u + offset, stride*u + offset + size - 1]``, clipped to the image
(zero padding contributes only known pixels).

The *label map* marks which units are forgery patches: ``X[i,j] = 1`` iff any
masked (unknown) pixel falls inside unit (i,j)'s clipped footprint.  Two
reference schemes are kept for comparison: ``patchgan`` (all units labeled 1)
and ``sm_patchgan`` (mask area-downsampled to the output grid and thresholded
at 0.5 — deliberately information-losing, since a unit's naive grid cell is
much smaller than its true footprint).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError

LABEL_SCHEMES = ("ours", "patchgan", "sm_patchgan")


@dataclass(frozen=True)
class LayerSpec:
    """One conv layer's geometry: kernel, stride, padding, dilation."""

    kernel: int
    stride: int
    padding: int
    dilation: int = 1

    def validate(self) -> None:
        if self.kernel < 1 or self.stride < 1 or self.padding < 0 or self.dilation < 1:
            raise ContractError(f"invalid layer spec {self}")

    @property
    def dilated_kernel(self) -> int:
        return self.dilation * (self.kernel - 1) + 1


def _normalize_specs(layer_specs) -> tuple[LayerSpec, ...]:
    out = []
    for spec in layer_specs:
        if isinstance(spec, LayerSpec):
            out.append(spec)
        else:
            out.append(LayerSpec(*spec))
        out[-1].validate()
    if not out:
        raise ContractError("layer_specs must contain at least one layer")
    return tuple(out)


@dataclass(frozen=True)
class PatchGeometry:
    """Exact input-space geometry of a patch discriminator's output grid."""

    layer_specs: tuple[LayerSpec, ...]
    input_size: int
    receptive_field: int
    stride: int
    offset: int
    grid_height: int
    grid_width: int

    def unit_interval(self, u: int) -> tuple[int, int]:
        """Unclipped 1-D footprint ``[start, stop)`` of output index ``u``."""
        start = self.stride * u + self.offset
        return start, start + self.receptive_field

    def clipped_footprint(self, i: int, j: int) -> tuple[int, int, int, int]:
        """Clipped footprint as ``(top, bottom, left, right)``, stops exclusive."""
        if not (0 <= i < self.grid_height and 0 <= j < self.grid_width):
            raise ContractError(f"unit ({i},{j}) outside grid "
                                f"{self.grid_height}x{self.grid_width}")
        t, b = self.unit_interval(i)
        l, r = self.unit_interval(j)
        clamp = lambda v: min(max(v, 0), self.input_size)  # noqa: E731
        return clamp(t), clamp(b), clamp(l), clamp(r)


def receptive_field_geometry(layer_specs, input_size: int = 256) -> PatchGeometry:
    """Compute :class:`PatchGeometry` for a conv stack on a square input."""
    specs = _normalize_specs(layer_specs)
    if input_size < 1:
        raise ContractError(f"input_size must be positive, got {input_size}")

    # forward pass for the output grid size
    size = input_size
    for spec in specs:
        size = (size + 2 * spec.padding - spec.dilated_kernel) // spec.stride + 1
        if size < 1:
            raise ContractError(
                f"layer {spec} reduces the spatial size below 1 (input {input_size})"
            )

    # backward recurrence for footprint size / stride / offset
    rf, stride, offset = 1, 1, 0
    for spec in reversed(specs):
        rf = (rf - 1) * spec.stride + spec.dilated_kernel
        stride *= spec.stride
        offset = offset * spec.stride - spec.padding

    return PatchGeometry(
        layer_specs=specs,
        input_size=input_size,
        receptive_field=rf,
        stride=stride,
        offset=offset,
        grid_height=size,
        grid_width=size,
    )


def _as_2d_mask(mask: torch.Tensor, input_size: int) -> torch.Tensor:
    if not isinstance(mask, torch.Tensor):
        raise ContractError(f"mask must be a torch.Tensor, got {type(mask)!r}")
    if mask.dim() == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.dim() != 2:
        raise ContractError(f"mask must be (H,W) or (1,H,W), got {tuple(mask.shape)}")
    if mask.shape != (input_size, input_size):
        raise ContractError(
            f"mask size {tuple(mask.shape)} != geometry input size {input_size}"
        )
    if not torch.logical_or(mask == 0.0, mask == 1.0).all():
        raise ContractError("mask must be binary (0.0 / 1.0)")
    return mask


def build_label_map(mask: torch.Tensor, geometry: PatchGeometry) -> torch.Tensor:
    """Exact forgery label map: 1 where the unit's footprint holds any masked pixel.

    Computed with an integral image, so cost is O(H*W + grid^2) regardless of
    footprint size.
    """
    mask2d = _as_2d_mask(mask, geometry.input_size)
    n = geometry.input_size
    # integral image with a leading zero row/col: ii[r, c] = sum(mask[:r, :c])
    ii = torch.zeros(n + 1, n + 1, dtype=torch.float64)
    ii[1:, 1:] = mask2d.double().cumsum(0).cumsum(1)

    units = torch.arange(geometry.grid_height)
    starts = (geometry.stride * units + geometry.offset).clamp(0, n)
    stops = (geometry.stride * units + geometry.offset + geometry.receptive_field).clamp(0, n)
    # windowed sums over [start, stop) x [start, stop); empty windows sum to 0
    t, b = starts[:, None], stops[:, None]
    l, r = starts[None, :], stops[None, :]
    sums = ii[b, r] - ii[t, r] - ii[b, l] + ii[t, l]
    return (sums > 0).float()


def build_label_map_variant(
    mask: torch.Tensor, geometry: PatchGeometry, scheme: str
) -> torch.Tensor:
    """Label map under one of the schemes in :data:`LABEL_SCHEMES`.

    ``ours``        exact receptive-field scheme (:func:`build_label_map`)
    ``patchgan``    every unit labeled 1 (mask ignored)
    ``sm_patchgan`` mask average-pooled onto the grid, thresholded at > 0.5
    """
    if scheme not in LABEL_SCHEMES:
        raise ContractError(f"unknown scheme {scheme!r}; expected one of {LABEL_SCHEMES}")
    if scheme == "ours":
        return build_label_map(mask, geometry)
    mask2d = _as_2d_mask(mask, geometry.input_size)
    if scheme == "patchgan":
        return torch.ones(geometry.grid_height, geometry.grid_width)
    pooled = F.adaptive_avg_pool2d(
        mask2d.unsqueeze(0).unsqueeze(0),
        (geometry.grid_height, geometry.grid_width),
    )[0, 0]
    return (pooled > 0.5).float()


def build_label_map_batch(masks: torch.Tensor, geometry: PatchGeometry) -> torch.Tensor:
    """Exact label maps for a ``(B,1,H,W)`` mask batch -> ``(B,1,h',w')``."""
    if masks.dim() != 4 or masks.shape[1] != 1:
        raise ContractError(f"masks must be (B,1,H,W), got {tuple(masks.shape)}")
    maps = [build_label_map(m, geometry) for m in masks]
    return torch.stack(maps).unsqueeze(1)
