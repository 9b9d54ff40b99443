"""Residual inpainting generator and the iterative reasoning driver.

The generator maps (previous composite, mask) -> full-frame residual.  It is a
U-shaped conv net: input conv over the 4-channel concat, residual downsampling
stages each followed by dilated-aggregation blocks, channel-attention
transformer blocks at the bottleneck, then a mirrored decoder with additive
encoder skips and skip-layer-excitation gates from deep encoder features to
shallow decoder features.  The head is linear (no activation): range control
happens in :func:`reinpaint.core.composite_step`, which clamps inside the mask
and copies known pixels verbatim.

Iterative reasoning (:func:`iterative_inpaint`): starting from the masked
input, each of T steps predicts a residual from the previous composite and
recomposites.  During training each step's input is detached so step t trains
on the current state of its predecessors without backpropagating into them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .core import ResidualTrace, composite_step
from .errors import ContractError, NumericFault
from .layers import (
    AOTBlock,
    ResidualDownBlock,
    SLEGate,
    SpectralConv2d,
    TransformerBlock,
    UpsampleBlock,
    _reflect_conv,
)
from .seeding import torch_generator


@dataclass
class GeneratorConfig:
    resolution: int = 256
    base_channels: int = 64
    downsample_stages: int = 4
    aot_blocks_per_stage: int = 1
    aot_dilation_rates: tuple = (1, 2, 4, 8)
    transformer_blocks: int = 4
    transformer_heads: int = 4
    transformer_ffn_expansion: float = 2.66
    sle_links: tuple | None = None  # None -> default links; () -> no gating
    max_channels: int = 512

    def validate(self) -> None:
        if self.resolution < 8:
            raise ContractError(f"resolution must be >= 8, got {self.resolution}")
        if self.base_channels < 1 or self.downsample_stages < 1:
            raise ContractError("base_channels and downsample_stages must be >= 1")
        if self.transformer_blocks < 0 or self.aot_blocks_per_stage < 0:
            raise ContractError("block counts must be >= 0")
        if self.transformer_heads < 1:
            raise ContractError("transformer_heads must be >= 1")
        if self.resolution % (2 ** self.downsample_stages) != 0:
            raise ContractError(
                f"resolution {self.resolution} not divisible by "
                f"2**{self.downsample_stages} downsampling stages"
            )
        if not self.aot_dilation_rates and self.aot_blocks_per_stage > 0:
            raise ContractError("aot_dilation_rates must be non-empty")
        bottleneck = self.stage_channels()[-1]
        if self.transformer_blocks > 0 and bottleneck % self.transformer_heads != 0:
            raise ContractError(
                f"bottleneck width {bottleneck} not divisible by heads {self.transformer_heads}"
            )
        for link in self.resolved_sle_links():
            src, dst = link
            if not (0 <= dst < src <= self.downsample_stages):
                raise ContractError(f"sle link {link} must satisfy 0 <= dst < src <= stages")

    def stage_channels(self) -> list[int]:
        """Channel width at each resolution level, index 0 = full resolution."""
        return [
            min(self.base_channels * (2 ** i), self.max_channels)
            for i in range(self.downsample_stages + 1)
        ]

    def resolved_sle_links(self) -> tuple:
        if self.sle_links is not None:
            return tuple(tuple(link) for link in self.sle_links)
        s = self.downsample_stages
        if s < 2:
            return ()
        links = [(s, 1)]
        if s >= 3:
            links.append((s - 1, 0))
        return tuple(links)

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "base_channels": self.base_channels,
            "downsample_stages": self.downsample_stages,
            "aot_blocks_per_stage": self.aot_blocks_per_stage,
            "aot_dilation_rates": list(self.aot_dilation_rates),
            "transformer_blocks": self.transformer_blocks,
            "transformer_heads": self.transformer_heads,
            "transformer_ffn_expansion": self.transformer_ffn_expansion,
            "sle_links": None if self.sle_links is None else [list(l) for l in self.sle_links],
            "max_channels": self.max_channels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        cfg = cls(**{
            **data,
            "aot_dilation_rates": tuple(data.get("aot_dilation_rates", (1, 2, 4, 8))),
            "sle_links": None if data.get("sle_links") is None
            else tuple(tuple(l) for l in data["sle_links"]),
        })
        cfg.validate()
        return cfg


class ResidualGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig, generator: torch.Generator | None = None):
        super().__init__()
        config.validate()
        self.config = config
        ch = config.stage_channels()
        rates = config.aot_dilation_rates
        gen = generator

        self.input_conv = _reflect_conv(4, ch[0], 3, gen)

        self.encoder_down = nn.ModuleList()
        self.encoder_aot = nn.ModuleList()
        for i in range(1, config.downsample_stages + 1):
            self.encoder_down.append(ResidualDownBlock(ch[i - 1], ch[i], gen))
            self.encoder_aot.append(nn.Sequential(*[
                AOTBlock(ch[i], rates, gen) for _ in range(config.aot_blocks_per_stage)
            ]))

        self.bottleneck = nn.Sequential(*[
            TransformerBlock(ch[-1], config.transformer_heads,
                             config.transformer_ffn_expansion, gen)
            for _ in range(config.transformer_blocks)
        ])

        self.decoder_up = nn.ModuleList()
        self.decoder_aot = nn.ModuleList()
        for i in range(config.downsample_stages, 0, -1):
            self.decoder_up.append(UpsampleBlock(ch[i], ch[i - 1], gen))
            self.decoder_aot.append(nn.Sequential(*[
                AOTBlock(ch[i - 1], rates, gen) for _ in range(config.aot_blocks_per_stage)
            ]))

        self.sle_gates = nn.ModuleDict()
        for src, dst in config.resolved_sle_links():
            self.sle_gates[f"{src}_{dst}"] = SLEGate(ch[src], ch[dst], gen)

        self.output_conv = _reflect_conv(ch[0], 3, 3, gen)

    def forward(self, prev_image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        squeeze = prev_image.dim() == 3
        if squeeze:
            prev_image, mask = prev_image.unsqueeze(0), mask.unsqueeze(0)
        r = self.config.resolution
        if prev_image.dim() != 4 or prev_image.shape[1:] != (3, r, r):
            raise ContractError(
                f"prev_image must be (B,3,{r},{r}), got {tuple(prev_image.shape)}"
            )
        if mask.shape != (prev_image.shape[0], 1, r, r):
            raise ContractError(f"mask must be (B,1,{r},{r}), got {tuple(mask.shape)}")

        h = torch.nn.functional.leaky_relu(
            self.input_conv(torch.cat([prev_image, mask], dim=1)), 0.2
        )
        encoder_feats = [h]
        for down, aot in zip(self.encoder_down, self.encoder_aot):
            h = aot(down(h))
            encoder_feats.append(h)

        h = self.bottleneck(h)

        links = self.config.resolved_sle_links()
        stages = self.config.downsample_stages
        for idx, (up, aot) in enumerate(zip(self.decoder_up, self.decoder_aot)):
            level = stages - idx - 1  # resolution level produced by this stage
            h = up(h) + encoder_feats[level]
            h = aot(h)
            for src, dst in links:
                if dst == level:
                    h = self.sle_gates[f"{src}_{dst}"](encoder_feats[src], h)

        residual = self.output_conv(h)
        if not torch.isfinite(residual).all():
            raise NumericFault("generator produced non-finite residual values")
        return residual.squeeze(0) if squeeze else residual


def build_generator(config: GeneratorConfig, seed: int) -> ResidualGenerator:
    """Construct a generator with fully seeded initialization."""
    return ResidualGenerator(config, generator=torch_generator(seed, "init"))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def iterative_inpaint(
    generator: ResidualGenerator,
    masked_input: torch.Tensor,
    mask: torch.Tensor,
    steps: int,
    detach_between_steps: bool = True,
) -> ResidualTrace:
    """Run T residual-reasoning steps from the masked input.

    ``detach_between_steps=True`` (the training semantics) cuts the graph at
    each step boundary; pass False to differentiate through the whole chain.
    Known pixels of every composite equal ``masked_input`` bit-exactly.
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    trace = ResidualTrace(masked_input=masked_input, mask=mask)
    current = masked_input
    for _ in range(steps):
        if detach_between_steps:
            current = current.detach()
        residual = generator(current, mask)
        current = composite_step(current, residual, mask, masked_input)
        trace.residuals.append(residual)
        trace.outputs.append(current)
    return trace
