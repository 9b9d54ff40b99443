"""Perceptual distance and the hinge adversarial losses.

Perceptual distance (LPIPS-style): tap features from a frozen backbone are
unit-normalized across channels at each position, differenced, squared,
weighted per channel by non-negative calibration weights (uniform ``1/C`` by
default — no calibration data ships with the package), averaged over
positions, and summed over taps.  Zero iff the tap features agree; symmetric;
non-negative.

Adversarial losses (all hinge, all expectations = means over every unit):

* image critic E:      ``relu(1 - E(real)).mean() + relu(1 + E(fake)).mean()``
  and generator side   ``-E(fake).mean()``
* patch critic D with label map X (1 = forgery patch):
  ``relu(1 - D(real)).mean() + (relu(1 - D(fake)) * (1-X)).mean()
  + (relu(1 + D(fake)) * X).mean()`` — known patches of a composite are
  supervised as real, forgery patches as fake — and generator side
  ``-(D(fake) * X).mean()``, which is identically zero (with zero gradient)
  when the mask touches no patch.

The total generator objective is the weighted sum of perceptual, image-critic,
and patch-critic terms, default weights (1.5, 1.0, 1.0).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .backbones import BackboneInfo, build_perceptual_backbone
from .errors import ContractError, NumericFault


class PerceptualDistance(nn.Module):
    """Frozen-backbone perceptual distance with per-channel calibration."""

    def __init__(self, backbone_flag: str = "random", seed: int = 0) -> None:
        super().__init__()
        self.backbone, self.backbone_info = build_perceptual_backbone(backbone_flag, seed)
        self._calibration: list[torch.Tensor] | None = None

    @property
    def info(self) -> BackboneInfo:
        return self.backbone_info

    def set_calibration_weights(self, weights: list[torch.Tensor]) -> None:
        """Install per-tap, per-channel non-negative weights (default uniform)."""
        for w in weights:
            if (w < 0).any():
                raise ContractError("calibration weights must be non-negative")
        self._calibration = [w.detach().clone() for w in weights]

    def forward(self, a: torch.Tensor, b: torch.Tensor, reduce: str = "mean") -> torch.Tensor:
        if a.shape != b.shape:
            raise ContractError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
        if a.dim() == 3:
            a, b = a.unsqueeze(0), b.unsqueeze(0)
        if reduce not in ("mean", "none"):
            raise ContractError(f"reduce must be 'mean' or 'none', got {reduce!r}")
        feats_a = self.backbone(a)
        feats_b = self.backbone(b)
        if self._calibration is not None and len(self._calibration) != len(feats_a):
            raise ContractError(
                f"{len(self._calibration)} calibration taps for {len(feats_a)} features"
            )
        total = torch.zeros(a.shape[0], dtype=a.dtype)
        for tap, (fa, fb) in enumerate(zip(feats_a, feats_b)):
            na = F.normalize(fa, dim=1, eps=1e-10)
            nb = F.normalize(fb, dim=1, eps=1e-10)
            if self._calibration is None:
                weight = torch.full((fa.shape[1],), 1.0 / fa.shape[1])
            else:
                weight = self._calibration[tap]
                if weight.shape != (fa.shape[1],):
                    raise ContractError(f"tap {tap}: weight shape {tuple(weight.shape)} "
                                        f"!= channels {fa.shape[1]}")
            sq = (na - nb).square() * weight[None, :, None, None]
            total = total + sq.sum(dim=1).mean(dim=(1, 2))
        return total.mean() if reduce == "mean" else total


def lpips_distance(metric: PerceptualDistance, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Batch-mean perceptual distance as a scalar tensor (>= 0)."""
    return metric(a, b, reduce="mean")


# ---------------------------------------------------------------------------
# hinge losses
# ---------------------------------------------------------------------------


def _check_scores(scores: torch.Tensor, name: str, dims: tuple[int, ...]) -> None:
    if scores.dim() not in dims:
        raise ContractError(f"{name} must have dim in {dims}, got {scores.dim()}")


def image_critic_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Hinge loss for the projected image critic (E update)."""
    _check_scores(real_scores, "real_scores", (1,))
    _check_scores(fake_scores, "fake_scores", (1,))
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def image_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator side of the image critic: push fake scores up."""
    _check_scores(fake_scores, "fake_scores", (1,))
    return -fake_scores.mean()


def _check_patch_maps(*maps: torch.Tensor) -> None:
    first = maps[0]
    for m in maps:
        if m.dim() != 4 or m.shape[1] != 1:
            raise ContractError(f"patch maps must be (B,1,h,w), got {tuple(m.shape)}")
        if m.shape != first.shape:
            raise ContractError(
                f"patch map shapes differ: {tuple(m.shape)} vs {tuple(first.shape)}"
            )


def patch_critic_loss(
    real_map: torch.Tensor, fake_map: torch.Tensor, label_map: torch.Tensor
) -> torch.Tensor:
    """Hinge loss for the patch forgery critic (D update).

    Ground-truth patches are real everywhere; composite patches are real where
    the label map is 0 (no masked pixel in the footprint) and fake where 1.
    """
    _check_patch_maps(real_map, fake_map, label_map)
    if not torch.logical_or(label_map == 0.0, label_map == 1.0).all():
        raise ContractError("label_map must be binary")
    real_term = F.relu(1.0 - real_map).mean()
    known_term = (F.relu(1.0 - fake_map) * (1.0 - label_map)).mean()
    forged_term = (F.relu(1.0 + fake_map) * label_map).mean()
    return real_term + known_term + forged_term


def patch_generator_loss(fake_map: torch.Tensor, label_map: torch.Tensor) -> torch.Tensor:
    """Generator side of the patch critic: raise scores on forgery patches only.

    Identically zero — with exactly zero gradient — when the label map is all
    zeros (empty mask): unmasked patches never push the generator.
    """
    _check_patch_maps(fake_map, label_map)
    return -(fake_map * label_map).mean()


def total_generator_loss(
    perceptual: torch.Tensor,
    image_adversarial: torch.Tensor,
    patch_adversarial: torch.Tensor,
    weights: tuple[float, float, float] = (1.5, 1.0, 1.0),
) -> torch.Tensor:
    """Weighted generator objective; rejects non-finite components."""
    if len(weights) != 3:
        raise ContractError(f"weights must have 3 entries, got {len(weights)}")
    for name, term in (
        ("perceptual", perceptual),
        ("image_adversarial", image_adversarial),
        ("patch_adversarial", patch_adversarial),
    ):
        if term.dim() != 0:
            raise ContractError(f"{name} loss must be a scalar tensor")
        if not torch.isfinite(term).all():
            raise NumericFault(f"{name} loss is non-finite: {term.item()!r}")
    w_perc, w_image, w_patch = weights
    return w_perc * perceptual + w_image * image_adversarial + w_patch * patch_adversarial
