"""Trainable audio/video encoders and the shared-space projection heads.

Audio: three strided time-frequency conv blocks (tanh), then mean pooling
over the frequency axis, giving one feature vector per reduced time step.
Video: a per-frame three-block spatial conv ladder with global spatial
pooling, then one temporal convolution for temporal context. Both end at
`embed_dim` channels; the projection heads map into the shared contrastive
space with per-step L2 normalization.

Smooth activations keep analytic gradients finite-difference-checkable.
"""

from __future__ import annotations

import math

import torch
from torch import nn

NORM_EPS = 1e-12

# time strides of the three audio blocks, per supported time reduction
_TIME_STRIDES = {1: (1, 1, 1), 2: (1, 1, 2), 4: (1, 2, 2)}


def l2_normalize(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Normalize the last axis to unit length; eps guards zero rows."""
    return x / (x.norm(dim=-1, keepdim=True) + eps)


def _fan_in(param: torch.Tensor) -> int:
    if param.ndim <= 1:
        return param.shape[0]
    receptive = 1
    for s in param.shape[2:]:
        receptive *= s
    return param.shape[1] * receptive


def initialize_module(module: nn.Module, generator: torch.Generator,
                      gain: float = 1.0) -> None:
    """Uniform fan-in init for weights, zero biases, in module definition order."""
    for submodule in module.modules():
        if isinstance(submodule, (nn.Conv1d, nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            bound = gain / math.sqrt(_fan_in(submodule.weight))
            with torch.no_grad():
                submodule.weight.uniform_(-bound, bound, generator=generator)
                if submodule.bias is not None:
                    submodule.bias.zero_()


class AudioEncoder(nn.Module):
    """(B, T_a, F_a) spectrograms -> (B, T_a // time_reduction, embed_dim)."""

    def __init__(self, channels: tuple[int, ...], time_reduction: int):
        super().__init__()
        if time_reduction not in _TIME_STRIDES:
            raise ValueError(f"unsupported time reduction {time_reduction}")
        strides = _TIME_STRIDES[time_reduction]
        widths = (1,) + tuple(channels)
        self.blocks = nn.ModuleList([
            nn.Conv2d(widths[i], widths[i + 1], kernel_size=3,
                      stride=(strides[i], 2), padding=1)
            for i in range(3)
        ])
        self.time_reduction = time_reduction

    def time_layer_specs(self) -> list[tuple[int, int, int]]:
        """(kernel, stride, padding) of each block along the time axis."""
        return [(b.kernel_size[0], b.stride[0], b.padding[0]) for b in self.blocks]

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        if spec.ndim != 3:
            raise ValueError(f"expected (B, T_a, F_a) spectrogram, got {tuple(spec.shape)}")
        x = spec[:, None]  # (B, 1, T_a, F_a)
        for block in self.blocks:
            x = torch.tanh(block(x))
        x = x.mean(dim=3)  # pool frequency -> (B, C, T_f)
        return x.transpose(1, 2)


class VideoEncoder(nn.Module):
    """(B, T, H, W, 3) clips -> (B, T, embed_dim), plus pre-pool spatial maps."""

    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        widths = (3,) + tuple(channels)
        self.blocks = nn.ModuleList([
            nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, stride=2, padding=1)
            for i in range(3)
        ])
        self.temporal = nn.Conv1d(channels[-1], channels[-1], kernel_size=3, padding=1)

    def spatial_maps(self, video: torch.Tensor) -> torch.Tensor:
        """Per-frame feature maps before spatial pooling: (B, T, h, w, C)."""
        if video.ndim != 5:
            raise ValueError(f"expected (B, T, H, W, 3) video, got {tuple(video.shape)}")
        b, t = video.shape[:2]
        x = video.reshape(b * t, *video.shape[2:]).permute(0, 3, 1, 2)
        for block in self.blocks:
            x = torch.tanh(block(x))
        _, c, h, w = x.shape
        return x.reshape(b, t, c, h, w).permute(0, 1, 3, 4, 2)

    def head(self, maps: torch.Tensor) -> torch.Tensor:
        """Global spatial pooling plus the temporal convolution stage."""
        pooled = maps.mean(dim=(2, 3))            # (B, T, C)
        x = torch.tanh(self.temporal(pooled.transpose(1, 2)))
        return x.transpose(1, 2)

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        return self.head(self.spatial_maps(video))


class ProjectionHead(nn.Module):
    """Linear map into the shared space with unit-norm rows."""

    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(dim, dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return l2_normalize(self.linear(features))
