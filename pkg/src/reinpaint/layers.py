"""Spectrally-normalized convolutions and generator building blocks.

Spectral normalization is hand-rolled (power iteration with explicit ``u``/``v``
buffers) so its state and eval-mode semantics are inspectable: one iteration
per forward pass while training, frozen estimates in eval mode, and a sigma
floor of 1e-12 so an all-zero weight normalizes to zeros instead of NaN.

Block zoo (used by :mod:`reinpaint.generator`):

* :class:`ResidualDownBlock`  stride-2 conv pair + average-pool shortcut
* :class:`UpsampleBlock`      nearest x2 + conv
* :class:`AOTBlock`           parallel dilated 3x3 branches, fused 1x1-style
  merge, gated residual (aggregated contextual transform)
* :class:`SLEGate`            skip-layer excitation: low-res feature gates a
  high-res feature channelwise
* :class:`TransformerBlock`   channel attention (transposed, so cost is linear
  in pixels) + gated depthwise feed-forward, both pre-normed

All convolutions here are spectrally normalized; the generator uses reflection
padding throughout.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError

SIGMA_FLOOR = 1e-12


def _l2_normalize(vec: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return vec / (vec.norm() + eps)


def spectral_normalize(
    weight: torch.Tensor,
    u: torch.Tensor,
    v: torch.Tensor,
    iterations: int = 1,
    update: bool = True,
) -> torch.Tensor:
    """Divide ``weight`` by its power-iteration top singular value estimate.

    ``weight`` is viewed as a ``(out, rest)`` matrix; ``u``/``v`` are the
    persistent left/right singular vector estimates (updated in place without
    gradient when ``update`` is true).  Sigma itself is computed from the live
    weight so gradients flow through the division.
    """
    if weight.dim() < 2:
        raise ContractError("spectral_normalize expects a weight with >= 2 dims")
    mat = weight.reshape(weight.shape[0], -1)
    if u.shape != (mat.shape[0],) or v.shape != (mat.shape[1],):
        raise ContractError(
            f"u/v shapes {tuple(u.shape)}/{tuple(v.shape)} do not match weight matrix "
            f"{tuple(mat.shape)}"
        )
    if update:
        with torch.no_grad():
            u_hat, v_hat = u, v
            for _ in range(max(iterations, 1)):
                v_hat = _l2_normalize(mat.t().mv(u_hat))
                u_hat = _l2_normalize(mat.mv(v_hat))
            u.copy_(u_hat)
            v.copy_(v_hat)
    sigma = torch.dot(u, mat.mv(v))
    # floor keeps an all-zero weight at zeros (0 / 1e-12) instead of NaN
    return weight / sigma.clamp(min=SIGMA_FLOOR)


def estimate_top_singular_value(weight: torch.Tensor, iterations: int = 30) -> float:
    """Fresh power-iteration estimate (no persistent state); for diagnostics."""
    mat = weight.detach().reshape(weight.shape[0], -1)
    u = _l2_normalize(torch.ones(mat.shape[0]))
    v = torch.zeros(mat.shape[1])
    for _ in range(iterations):
        v = _l2_normalize(mat.t().mv(u))
        u = _l2_normalize(mat.mv(v))
    return float(torch.dot(u, mat.mv(v)))


class SpectralConv2d(nn.Module):
    """Conv2d whose weight is spectrally normalized at every forward."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
        padding_mode: str = "zeros",
        power_iterations: int = 1,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        if padding_mode not in ("zeros", "reflect"):
            raise ContractError(f"unsupported padding_mode {padding_mode!r}")
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.groups = groups
        self.padding_mode = padding_mode
        self.power_iterations = power_iterations
        weight = torch.empty(out_channels, in_channels // groups, kernel_size, kernel_size)
        weight.normal_(0.0, 0.02, generator=generator)
        self.weight = nn.Parameter(weight)
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        flat = weight.reshape(out_channels, -1)
        u = torch.empty(flat.shape[0]).normal_(generator=generator)
        v = torch.empty(flat.shape[1]).normal_(generator=generator)
        self.register_buffer("u", _l2_normalize(u))
        self.register_buffer("v", _l2_normalize(v))
        # warm-start the estimates so eval-before-train is already sane
        with torch.no_grad():
            spectral_normalize(self.weight, self.u, self.v, iterations=5, update=True)

    def normalized_weight(self) -> torch.Tensor:
        return spectral_normalize(
            self.weight, self.u, self.v, self.power_iterations, update=self.training
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        weight = self.normalized_weight()
        padding = self.padding
        if self.padding_mode == "reflect" and self.padding > 0:
            x = F.pad(x, [self.padding] * 4, mode="reflect")
            padding = 0
        return F.conv2d(x, weight, self.bias, self.stride, padding, self.dilation, self.groups)


def _reflect_conv(in_ch, out_ch, kernel, generator, stride=1, dilation=1, groups=1):
    pad = dilation * (kernel - 1) // 2
    return SpectralConv2d(
        in_ch, out_ch, kernel, stride=stride, padding=pad, dilation=dilation,
        groups=groups, padding_mode="reflect", generator=generator,
    )


class ResidualDownBlock(nn.Module):
    """Halve resolution: two-conv main path averaged with a pooled shortcut."""

    def __init__(self, in_channels: int, out_channels: int, generator=None) -> None:
        super().__init__()
        self.conv1 = SpectralConv2d(
            in_channels, out_channels, 4, stride=2, padding=1,
            padding_mode="reflect", generator=generator,
        )
        self.conv2 = _reflect_conv(out_channels, out_channels, 3, generator)
        self.shortcut = SpectralConv2d(in_channels, out_channels, 1, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        main = F.leaky_relu(self.conv1(x), 0.2)
        main = F.leaky_relu(self.conv2(main), 0.2)
        skip = self.shortcut(F.avg_pool2d(x, 2))
        return (main + skip) / 2.0


class UpsampleBlock(nn.Module):
    """Double resolution: nearest upsample then conv."""

    def __init__(self, in_channels: int, out_channels: int, generator=None) -> None:
        super().__init__()
        self.conv = _reflect_conv(in_channels, out_channels, 3, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.conv(x), 0.2)


class AOTBlock(nn.Module):
    """Aggregate parallel dilated 3x3 branches and merge through a soft gate.

    Branch outputs (one per dilation rate) are concatenated back to the input
    width, fused by a 3x3 conv, and blended with the identity path using a
    per-pixel sigmoid gate computed from the input.
    """

    def __init__(self, channels: int, dilation_rates, generator=None) -> None:
        super().__init__()
        rates = tuple(dilation_rates)
        if not rates:
            raise ContractError("AOTBlock needs at least one dilation rate")
        split = channels // len(rates)
        if split < 1:
            raise ContractError(
                f"channels {channels} too narrow for {len(rates)} dilation branches"
            )
        widths = [split] * len(rates)
        widths[0] += channels - split * len(rates)  # first branch absorbs remainder
        self.branches = nn.ModuleList(
            _reflect_conv(channels, w, 3, generator, dilation=r)
            for w, r in zip(widths, rates)
        )
        self.fuse = _reflect_conv(channels, channels, 3, generator)
        self.gate = _reflect_conv(channels, channels, 3, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        branches = torch.cat([F.leaky_relu(b(x), 0.2) for b in self.branches], dim=1)
        fused = self.fuse(branches)
        gate = self.gate(x)
        # standardize gate logits per sample before the sigmoid
        mean = gate.mean(dim=(1, 2, 3), keepdim=True)
        std = gate.std(dim=(1, 2, 3), keepdim=True)
        gate = torch.sigmoid((gate - mean) / (std + 1e-5))
        return x * (1.0 - gate) + fused * gate


class SLEGate(nn.Module):
    """Skip-layer excitation: low-res feature -> channelwise gate on high-res."""

    def __init__(self, low_channels: int, high_channels: int, generator=None) -> None:
        super().__init__()
        self.squeeze = SpectralConv2d(low_channels, high_channels, 4, generator=generator)
        self.excite = SpectralConv2d(high_channels, high_channels, 1, generator=generator)

    def forward(self, low: torch.Tensor, high: torch.Tensor) -> torch.Tensor:
        gate = F.adaptive_avg_pool2d(low, 4)
        gate = F.silu(self.squeeze(gate))
        gate = torch.sigmoid(self.excite(gate))
        return high * gate


class ChannelLayerNorm(nn.Module):
    """LayerNorm across the channel dim at each spatial position."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + 1e-6)
        return x * self.weight[None, :, None, None] + self.bias[None, :, None, None]


class ChannelAttention(nn.Module):
    """Multi-head attention across channels (attention map is C/heads square,
    so cost stays linear in pixel count); 3x3 depthwise convs mix locally."""

    def __init__(self, channels: int, heads: int, generator=None) -> None:
        super().__init__()
        if channels % heads != 0:
            raise ContractError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = SpectralConv2d(channels, channels * 3, 1, generator=generator)
        self.qkv_mix = _reflect_conv(
            channels * 3, channels * 3, 3, generator, groups=channels * 3
        )
        self.project = SpectralConv2d(channels, channels, 1, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q, k, v = self.qkv_mix(self.qkv(x)).chunk(3, dim=1)
        shape = (b, self.heads, c // self.heads, h * w)
        q = F.normalize(q.reshape(shape), dim=-1)
        k = F.normalize(k.reshape(shape), dim=-1)
        v = v.reshape(shape)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.temperature, dim=-1)
        out = (attn @ v).reshape(b, c, h, w)
        return self.project(out)


class GatedFeedForward(nn.Module):
    """Depthwise-conv feed-forward with a GELU gate."""

    def __init__(self, channels: int, expansion: float, generator=None) -> None:
        super().__init__()
        hidden = max(int(channels * expansion), 1)
        self.project_in = SpectralConv2d(channels, hidden * 2, 1, generator=generator)
        self.mix = _reflect_conv(hidden * 2, hidden * 2, 3, generator, groups=hidden * 2)
        self.project_out = SpectralConv2d(hidden, channels, 1, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gate, value = self.mix(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(gate) * value)


class TransformerBlock(nn.Module):
    def __init__(self, channels: int, heads: int, expansion: float = 2.66, generator=None):
        super().__init__()
        self.norm1 = ChannelLayerNorm(channels)
        self.attention = ChannelAttention(channels, heads, generator)
        self.norm2 = ChannelLayerNorm(channels)
        self.feed_forward = GatedFeedForward(channels, expansion, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.norm1(x))
        return x + self.feed_forward(self.norm2(x))
