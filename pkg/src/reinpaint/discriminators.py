"""Two adversaries: a projected image critic and a patch-level forgery critic.

``ProjectedDiscriminator`` scores whole images.  A *frozen* projector (a
pretrained or seeded-random multi-scale trunk plus random cross-channel and
cross-scale mixing, in the projected-GAN style) embeds the image; only a small
spectrally-normalized conv head on the highest-resolution mixed features is
trainable.  Freezing the projector means the embedding space cannot collapse
to please the generator.

``ForgeryPatchDiscriminator`` is a five-layer PatchGAN (kernel 4, strides
2,2,2,1,1, zero padding 1, spectral norm) emitting one logit per patch unit.
It uses zero padding deliberately: the label-map geometry treats padding as
known pixels, and reflection padding would leak interior content into border
footprints.  Its ``layer_specs``/``geometry`` expose the exact footprint
arithmetic used to build label maps for its output grid.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .backbones import BackboneInfo, build_projector_backbone, state_hash
from .errors import ContractError
from .labelmap import LayerSpec, PatchGeometry, receptive_field_geometry
from .layers import SpectralConv2d
from .seeding import torch_generator


class FeatureProjector(nn.Module):
    """Frozen multi-scale embedding: backbone taps + random CCM/CSM mixing.

    Cross-channel mixing (CCM) maps every tap to a common width with 1x1
    convs; cross-scale mixing (CSM) then runs top-down, upsampling the deeper
    mixed map and fusing it into the shallower one through a 3x3 conv.  All
    mixing weights are seeded random and frozen, like the backbone itself.
    """

    def __init__(self, backbone_flag: str = "random", seed: int = 0,
                 mixed_channels: int = 64) -> None:
        super().__init__()
        self.backbone, self.backbone_info = build_projector_backbone(backbone_flag, seed)
        self.mixed_channels = mixed_channels
        gen = torch_generator(seed, "init", "projector_mix")
        with torch.no_grad():
            probe = torch.zeros(1, 3, 64, 64)
            tap_channels = [f.shape[1] for f in self.backbone(probe)]
        self.ccm = nn.ModuleList(nn.Conv2d(ch, mixed_channels, 1) for ch in tap_channels)
        self.csm = nn.ModuleList(
            nn.Conv2d(mixed_channels, mixed_channels, 3, padding=1)
            for _ in tap_channels[:-1]
        )
        for conv in [*self.ccm, *self.csm]:
            fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
            with torch.no_grad():
                conv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                conv.bias.zero_()
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        taps = self.backbone(images)
        mixed = [ccm(f) for ccm, f in zip(self.ccm, taps)]
        # top-down pass: deepest map flows up into shallower ones
        for i in range(len(mixed) - 2, -1, -1):
            upsampled = F.interpolate(mixed[i + 1], size=mixed[i].shape[-2:], mode="nearest")
            mixed[i] = self.csm[i](mixed[i] + upsampled)
        return mixed


class ProjectedDiscriminator(nn.Module):
    """Scalar real/fake score from frozen projected features.

    Only the head (spectral-norm convs striding the highest-resolution mixed
    map down to 4x4, then a final 4x4 conv) is trainable.
    """

    def __init__(self, resolution: int, backbone_flag: str = "random", seed: int = 0,
                 mixed_channels: int = 64, max_head_channels: int = 512) -> None:
        super().__init__()
        if resolution < 16:
            raise ContractError(f"resolution must be >= 16, got {resolution}")
        self.resolution = resolution
        self.projector = FeatureProjector(backbone_flag, seed, mixed_channels)
        with torch.no_grad():
            probe_size = self.projector(torch.zeros(1, 3, resolution, resolution))[0].shape[-1]

        gen = torch_generator(seed, "init", "projected_head")
        layers: list[nn.Module] = []
        ch, size = mixed_channels, probe_size
        while size > 4:
            nxt = min(ch * 2, max_head_channels)
            layers += [SpectralConv2d(ch, nxt, 4, stride=2, padding=1, generator=gen),
                       nn.LeakyReLU(0.2)]
            ch, size = nxt, size // 2
        layers.append(SpectralConv2d(ch, 1, size, generator=gen))
        self.head = nn.Sequential(*layers)

    @property
    def backbone_info(self) -> BackboneInfo:
        return self.projector.backbone_info

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ContractError(f"images must be (B,3,H,W), got {tuple(images.shape)}")
        if images.shape[-1] != self.resolution or images.shape[-2] != self.resolution:
            raise ContractError(
                f"images must be {self.resolution}x{self.resolution}, "
                f"got {tuple(images.shape[-2:])}"
            )
        largest = self.projector(images)[0]
        return self.head(largest).flatten(1).mean(dim=1)


class ForgeryPatchDiscriminator(nn.Module):
    """Five-layer spectral-norm PatchGAN over images -> per-patch logits."""

    STRIDES = (2, 2, 2, 1, 1)

    def __init__(self, base_channels: int = 64, seed: int = 0) -> None:
        super().__init__()
        if base_channels < 1:
            raise ContractError(f"base_channels must be >= 1, got {base_channels}")
        gen = torch_generator(seed, "init", "patch_d")
        b = base_channels
        widths = [3, b, 2 * b, 4 * b, 8 * b]
        convs = []
        for i, stride in enumerate(self.STRIDES[:-1]):
            convs += [SpectralConv2d(widths[i], widths[i + 1], 4, stride=stride,
                                     padding=1, generator=gen),
                      nn.LeakyReLU(0.2)]
        convs.append(SpectralConv2d(widths[-1], 1, 4, stride=self.STRIDES[-1],
                                    padding=1, generator=gen))
        self.net = nn.Sequential(*convs)

    @property
    def layer_specs(self) -> list[LayerSpec]:
        return [LayerSpec(kernel=4, stride=s, padding=1) for s in self.STRIDES]

    def geometry(self, input_size: int) -> PatchGeometry:
        return receptive_field_geometry(self.layer_specs, input_size)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ContractError(f"images must be (B,3,H,W), got {tuple(images.shape)}")
        return self.net(images)
