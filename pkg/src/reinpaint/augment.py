"""Differentiable, seedable augmentation for discriminator inputs.

Policies (comma-separated): ``color`` (brightness, saturation, contrast) and
``translation`` (integer shift up to 1/8 of the side, zero-filled).  Cutout is
deliberately not offered: blanking rectangles would manufacture fake unknown
regions and corrupt the patch label-map semantics.

One :class:`Augmenter` instance draws its parameters once (lazily, per batch
size) and applies the *same* transform to every tensor passed through it —
that is how the real batch and the composite batch within one training step
stay aligned.  Masks ride along via ``augment(mask, is_mask=True)``: they skip
the color ops but receive the identical translation, so a label map built
from the translated mask still marks exactly the forged patches of the
translated composite (zero-filled border pixels count as known).

All ops are differentiable; gradients flow through to the input images.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ContractError
from .seeding import torch_generator

POLICY_TOKENS = ("color", "translation")
TRANSLATION_RATIO = 0.125


def parse_policy(policy: str) -> tuple[str, ...]:
    tokens = tuple(t.strip() for t in policy.split(",") if t.strip())
    for token in tokens:
        if token not in POLICY_TOKENS:
            raise ContractError(
                f"unknown augmentation token {token!r}; expected subset of {POLICY_TOKENS}"
            )
    return tokens


class Augmenter:
    """One training step's worth of shared augmentation."""

    def __init__(self, policy: str, seed: int) -> None:
        self.tokens = parse_policy(policy)
        self._generator = torch_generator(seed, "augment")
        self.params: dict[str, torch.Tensor] | None = None
        self._shape: tuple[int, int, int] | None = None

    def _draw(self, batch: int, height: int, width: int) -> None:
        gen = self._generator
        params: dict[str, torch.Tensor] = {}
        if "color" in self.tokens:
            params["brightness"] = torch.rand(batch, generator=gen) - 0.5
            params["saturation"] = torch.rand(batch, generator=gen) * 2.0
            params["contrast"] = torch.rand(batch, generator=gen) + 0.5
        if "translation" in self.tokens:
            max_h = int(height * TRANSLATION_RATIO + 0.5)
            max_w = int(width * TRANSLATION_RATIO + 0.5)
            params["shift_rows"] = torch.randint(
                -max_h, max_h + 1, (batch,), generator=gen
            )
            params["shift_cols"] = torch.randint(
                -max_w, max_w + 1, (batch,), generator=gen
            )
        self.params = params
        self._shape = (batch, height, width)

    def __call__(self, images: torch.Tensor, is_mask: bool = False) -> torch.Tensor:
        if images.dim() != 4:
            raise ContractError(f"expected (B,C,H,W), got {tuple(images.shape)}")
        b, _, h, w = images.shape
        if self.params is None:
            self._draw(b, h, w)
        elif self._shape != (b, h, w):
            raise ContractError(
                f"augmenter drew parameters for {self._shape}, got {(b, h, w)}; "
                "use one Augmenter per step and batch shape"
            )
        out = images
        if "color" in self.tokens and not is_mask:
            p = self.params
            out = out + p["brightness"].view(b, 1, 1, 1)
            pixel_mean = out.mean(dim=1, keepdim=True)
            out = (out - pixel_mean) * p["saturation"].view(b, 1, 1, 1) + pixel_mean
            sample_mean = out.mean(dim=(1, 2, 3), keepdim=True)
            out = (out - sample_mean) * p["contrast"].view(b, 1, 1, 1) + sample_mean
        if "translation" in self.tokens:
            out = _translate(out, self.params["shift_rows"], self.params["shift_cols"])
        return out


def _translate(x: torch.Tensor, shift_rows: torch.Tensor, shift_cols: torch.Tensor) -> torch.Tensor:
    """out[b, :, i, j] = x[b, :, i - shift_rows[b], j - shift_cols[b]], zero outside."""
    b, _, h, w = x.shape
    padded = F.pad(x, [1, 1, 1, 1])
    batch_idx = torch.arange(b).view(b, 1, 1)
    rows = torch.arange(h).view(1, h, 1) - shift_rows.view(b, 1, 1)
    cols = torch.arange(w).view(1, 1, w) - shift_cols.view(b, 1, 1)
    rows = (rows + 1).clamp(0, h + 1).expand(b, h, w)
    cols = (cols + 1).clamp(0, w + 1).expand(b, h, w)
    gathered = padded.permute(0, 2, 3, 1)[batch_idx, rows, cols]
    return gathered.permute(0, 3, 1, 2)
