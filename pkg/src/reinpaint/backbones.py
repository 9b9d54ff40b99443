"""Frozen feature extractors for three roles, each with an offline fallback.

Roles:

* ``projector``   multi-scale features feeding the projected discriminator
* ``perceptual``  tap features for the perceptual (LPIPS-style) distance
* ``eval``        a single 2048-dim embedding per image for FID

Each role accepts a backbone flag.  The pretrained flags (``efficientnet``,
``vgg16``, ``inception``) pull torchvision weights and raise
:class:`ResourceMissing` when those cannot be loaded (e.g. no network); the
``random`` flag builds a seeded, frozen, randomly-initialized CNN instead.
Random features carry no semantics, but they are deterministic, sensitive to
their input, and sufficient for the relative comparisons the training loop and
the test suite make.  The flag in use is recorded in checkpoints and eval
reports via :class:`BackboneInfo`, including a hash of the frozen weights so
any drift is detectable.

All returned modules are frozen (``requires_grad=False``, eval mode);
gradients still flow to their *inputs*, which is what adversarial and
perceptual losses need.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError, ResourceMissing
from .seeding import torch_generator

ROLE_FLAGS = {
    "projector": ("random", "efficientnet"),
    "perceptual": ("random", "vgg16"),
    "eval": ("random", "inception"),
}

EVAL_FEATURE_DIM = 2048


@dataclass(frozen=True)
class BackboneInfo:
    """Provenance record for a frozen backbone: role, flag, weight hash."""

    role: str
    flag: str
    state_hash: str

    def to_dict(self) -> dict:
        return {"role": self.role, "flag": self.flag, "state_hash": self.state_hash}


def state_hash(module: nn.Module) -> str:
    """Stable short hash of a module's full state dict."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()[:16]


def _freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _seeded_conv(in_ch, out_ch, kernel, stride, generator, dilation=1):
    conv = nn.Conv2d(
        in_ch, out_ch, kernel, stride=stride,
        padding=dilation * (kernel - 1) // 2, dilation=dilation, bias=True,
    )
    # kaiming-scaled normal keeps activations in a sane range through depth
    fan_in = in_ch * kernel * kernel
    with torch.no_grad():
        conv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=generator)
        conv.bias.normal_(0.0, 0.1, generator=generator)
    return conv


class FrozenFeatureCNN(nn.Module):
    """Seeded random CNN emitting one feature map per stage (strides 2,4,...)."""

    def __init__(self, channels=(32, 64, 128, 256), seed: int = 0) -> None:
        super().__init__()
        gen = torch_generator(seed, "init", "frozen_cnn")
        stages = []
        in_ch = 3
        for out_ch in channels:
            stages.append(nn.Sequential(
                _seeded_conv(in_ch, out_ch, 3, 2, gen),
                nn.LeakyReLU(0.2),
                _seeded_conv(out_ch, out_ch, 3, 1, gen),
                nn.LeakyReLU(0.2),
            ))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.channels = tuple(channels)
        _freeze(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class FrozenEvalBackbone(nn.Module):
    """Seeded random CNN -> global pooled 2048-dim embedding (FID features)."""

    def __init__(self, seed: int = 0) -> None:
        super().__init__()
        self.trunk = FrozenFeatureCNN((32, 64, 128, 256), seed=seed)
        gen = torch_generator(seed, "init", "eval_head")
        self.head = _seeded_conv(256, EVAL_FEATURE_DIM, 1, 1, gen)
        _freeze(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        deepest = self.trunk(x)[-1]
        pooled = F.adaptive_avg_pool2d(self.head(deepest), 1)
        return pooled.flatten(1)


class _TorchvisionTaps(nn.Module):
    """Wrap a torchvision feature trunk, emitting taps at chosen indices."""

    def __init__(self, features: nn.Module, tap_indices: tuple[int, ...]) -> None:
        super().__init__()
        self.features = features
        self.tap_indices = tap_indices
        # inputs arrive in [-1,1]; torchvision models expect ImageNet stats
        self.register_buffer("shift", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("scale", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        _freeze(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = ((x + 1.0) / 2.0 - self.shift) / self.scale
        feats = []
        for idx, layer in enumerate(self.features):
            h = layer(h)
            if idx in self.tap_indices:
                feats.append(h)
        return feats


def _load_torchvision(loader_name: str, flag: str):
    try:
        import torchvision.models as tvm

        loader = getattr(tvm, loader_name)
        return loader(weights="DEFAULT")
    except Exception as exc:  # download failure, missing torchvision, etc.
        raise ResourceMissing(
            f"pretrained backbone {flag!r} unavailable ({exc.__class__.__name__}: {exc}); "
            f"use the 'random' flag for the offline fallback"
        ) from exc


def _check_flag(role: str, flag: str) -> None:
    allowed = ROLE_FLAGS.get(role)
    if allowed is None:
        raise ContractError(f"unknown backbone role {role!r}")
    if flag not in allowed:
        raise ContractError(f"role {role!r} accepts flags {allowed}, got {flag!r}")


def build_projector_backbone(flag: str, seed: int) -> tuple[nn.Module, BackboneInfo]:
    """Multi-scale trunk for the projected discriminator."""
    _check_flag("projector", flag)
    if flag == "random":
        module = FrozenFeatureCNN((32, 64, 128, 256), seed=seed)
    else:
        model = _load_torchvision("efficientnet_b1", flag)
        # stage boundaries of the efficientnet feature pyramid (strides 4..32)
        module = _TorchvisionTaps(model.features, tap_indices=(2, 3, 5, 7))
    return module, BackboneInfo("projector", flag, state_hash(module))


def build_perceptual_backbone(flag: str, seed: int) -> tuple[nn.Module, BackboneInfo]:
    """Tap-feature trunk for the perceptual distance."""
    _check_flag("perceptual", flag)
    if flag == "random":
        module = FrozenFeatureCNN((32, 64, 128, 256), seed=seed)
    else:
        model = _load_torchvision("vgg16", flag)
        # relu1_2, relu2_2, relu3_3, relu4_3
        module = _TorchvisionTaps(model.features, tap_indices=(3, 8, 15, 22))
    return module, BackboneInfo("perceptual", flag, state_hash(module))


def build_eval_backbone(flag: str, seed: int) -> tuple[nn.Module, BackboneInfo]:
    """Per-image embedding extractor for FID."""
    _check_flag("eval", flag)
    if flag == "random":
        module = FrozenEvalBackbone(seed=seed)
        return module, BackboneInfo("eval", flag, state_hash(module))

    model = _load_torchvision("inception_v3", flag)

    class _InceptionEmbedding(nn.Module):
        def __init__(self, net):
            super().__init__()
            net.fc = nn.Identity()
            net.aux_logits = False
            net.AuxLogits = None
            self.net = net
            _freeze(self)

        def forward(self, x):
            x = F.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
            return self.net((x + 1.0) / 2.0)

    module = _InceptionEmbedding(model)
    return module, BackboneInfo("eval", flag, state_hash(module))
