"""Multi-scale feature pyramids via temporal pooling and per-level convolutions.

Level 1 is the finest (identity pooling); level l mean-pools the sequence
with window ``factors[l-1]`` (partial tail windows average the remaining
steps, so level lengths follow ceil(T / factor)), then applies a trainable
depth-1 convolution and re-normalizes every row to unit length. A spatial
variant pools encoder feature maps over s x s grid partitions and flattens
the cells into extra per-frame feature steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .encoders import l2_normalize


@dataclass
class FeatureSequence:
    """A (batched) time-major feature sequence: features[..., T, D]."""
    features: torch.Tensor
    modality: str
    scale_level: int = 1


@dataclass
class FeaturePyramid:
    """Per-scale feature sequences, finest (level 1) first."""
    levels: list[FeatureSequence] = field(default_factory=list)
    modality: str = ""

    def __len__(self) -> int:
        return len(self.levels)


def mean_pool_time(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Non-overlapping mean pooling along dim -2; tail window may be partial."""
    if factor < 1:
        raise ValueError(f"pool factor must be >= 1, got {factor}")
    t = x.shape[-2]
    if factor > t:
        raise ValueError(f"pool factor {factor} exceeds sequence length {t}")
    if factor == 1:
        return x
    n_out = -(-t // factor)
    csum = torch.cumsum(x, dim=-2)
    csum = torch.cat([torch.zeros_like(csum[..., :1, :]), csum], dim=-2)
    starts = torch.arange(n_out, device=x.device) * factor
    ends = torch.clamp(starts + factor, max=t)
    sums = csum.index_select(-2, ends) - csum.index_select(-2, starts)
    counts = (ends - starts).to(x.dtype).reshape((1,) * (x.ndim - 2) + (n_out, 1))
    return sums / counts


class PyramidTransform(nn.Module):
    """Trainable per-level depth-1 convolutions for one modality."""

    def __init__(self, dim: int, factors: tuple[int, ...]):
        super().__init__()
        if not factors or factors[0] != 1:
            raise ValueError("factors must start at 1 (finest level)")
        if any(a >= b for a, b in zip(factors, factors[1:])):
            raise ValueError("factors must strictly increase")
        self.factors = tuple(factors)
        self.convs = nn.ModuleList([
            nn.Conv1d(dim, dim, kernel_size=3, padding=1) for _ in factors
        ])

    def forward(self, features: torch.Tensor) -> list[torch.Tensor]:
        levels = []
        for factor, conv in zip(self.factors, self.convs):
            pooled = mean_pool_time(features, factor)
            mixed = conv(pooled.transpose(-1, -2)).transpose(-1, -2)
            levels.append(l2_normalize(mixed))
        return levels


def temporal_pyramid(seq: FeatureSequence, transform: PyramidTransform) -> FeaturePyramid:
    """Build the multi-scale pyramid for one modality's feature sequence."""
    if transform.factors[-1] > seq.features.shape[-2]:
        raise ValueError(
            f"factor {transform.factors[-1]} exceeds sequence length "
            f"{seq.features.shape[-2]}")
    levels = [
        FeatureSequence(features=feats, modality=seq.modality, scale_level=l + 1)
        for l, feats in enumerate(transform(seq.features))
    ]
    return FeaturePyramid(levels=levels, modality=seq.modality)


def pool_spatial_grid(maps: torch.Tensor, grid: int) -> torch.Tensor:
    """Average (B, T, h, w, C) maps over an s x s partition -> (B, T, s*s, C).

    Spatial dims not divisible by the grid are padded by edge replication
    before pooling.
    """
    if grid < 1:
        raise ValueError(f"grid size must be >= 1, got {grid}")
    b, t, h, w, c = maps.shape
    pad_h = (-h) % grid
    pad_w = (-w) % grid
    if pad_h or pad_w:
        x = maps.permute(0, 1, 4, 2, 3).reshape(b * t, c, h, w)
        x = nn.functional.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        maps = x.reshape(b, t, c, h + pad_h, w + pad_w).permute(0, 1, 3, 4, 2)
        h, w = h + pad_h, w + pad_w
    cells = maps.reshape(b, t, grid, h // grid, grid, w // grid, c)
    return cells.mean(dim=(3, 5)).reshape(b, t, grid * grid, c)


class SpatialPyramid(nn.Module):
    """Grid-pooled spatial features projected into the shared width."""

    def __init__(self, in_channels: int, dim: int, grids: tuple[int, ...]):
        super().__init__()
        self.grids = tuple(grids)
        self.project = nn.Linear(in_channels, dim)

    def forward(self, maps: torch.Tensor) -> list[FeatureSequence]:
        out = []
        for level, grid in enumerate(self.grids, start=1):
            cells = pool_spatial_grid(maps, grid)            # (B, T, s*s, C)
            b, t, n, c = cells.shape
            seq = cells.reshape(b, t * n, c)                 # cells become time steps
            seq = l2_normalize(self.project(seq))
            out.append(FeatureSequence(features=seq, modality="video", scale_level=level))
        return out


def build_feature_pyramid(audio_seq: FeatureSequence, video_seq: FeatureSequence,
                          audio_transform: PyramidTransform,
                          video_transform: PyramidTransform,
                          ) -> tuple[FeaturePyramid, FeaturePyramid]:
    """Build both pyramids; per-level time lengths are guaranteed to match."""
    if audio_seq.features.shape[-2] != video_seq.features.shape[-2]:
        raise ValueError(
            f"audio and video sequences must share time length, got "
            f"{audio_seq.features.shape[-2]} vs {video_seq.features.shape[-2]}")
    if audio_transform.factors != video_transform.factors:
        raise ValueError("audio and video pyramid factors must match")
    return (temporal_pyramid(audio_seq, audio_transform),
            temporal_pyramid(video_seq, video_transform))
