"""Multi-scale contrastive video-audio alignment objective.

Per scale, audio/video sequences are pooled over time to one embedding per
sample, pairwise cosine similarities form a batch x batch matrix, and a
symmetric InfoNCE is taken at the diagonal. The total objective is the sum
over scales. At the finest scale an attention weighting, computed from the
per-time-step audio/video dot products, can replace uniform time pooling
("feature" mode) or reweight per-time-step loss terms ("loss" mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .encoders import NORM_EPS
from .errors import NumericError
from .pyramid import FeaturePyramid


@dataclass
class SimilarityMatrix:
    """Pairwise audio-vs-video cosine similarities for one scale."""
    values: torch.Tensor  # (B, B); entry (i, j) = cos(audio_i, video_j)
    scale_level: int = 1
    temperature: float = 1.0


def cosine_similarity_matrix(audio_emb: torch.Tensor, video_emb: torch.Tensor,
                             scale_level: int = 1,
                             temperature: float = 1.0) -> SimilarityMatrix:
    if audio_emb.shape != video_emb.shape or audio_emb.ndim != 2:
        raise ValueError(
            f"expected matching (B, D) embeddings, got {tuple(audio_emb.shape)} "
            f"vs {tuple(video_emb.shape)}")
    if audio_emb.shape[0] < 2:
        raise ValueError("contrastive similarity needs batch size >= 2")
    a = audio_emb / (audio_emb.norm(dim=1, keepdim=True) + NORM_EPS)
    v = video_emb / (video_emb.norm(dim=1, keepdim=True) + NORM_EPS)
    return SimilarityMatrix(values=a @ v.T, scale_level=scale_level,
                            temperature=temperature)


def info_nce(sim: SimilarityMatrix, temperature: float | None = None) -> torch.Tensor:
    """Symmetric InfoNCE: cross-entropy at the diagonal, rows and columns averaged."""
    tau = sim.temperature if temperature is None else temperature
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    values = sim.values
    if not torch.isfinite(values).all():
        raise NumericError("similarity matrix contains non-finite entries")
    logits = values / tau
    targets = torch.arange(values.shape[0], device=values.device)
    row_loss = F.cross_entropy(logits, targets)
    col_loss = F.cross_entropy(logits.T, targets)
    return (row_loss + col_loss) / 2


def temporal_attention_weights(video_seq: torch.Tensor,
                               audio_seq: torch.Tensor) -> torch.Tensor:
    """Softmax over time of the per-step video-audio dot products: (B, T)."""
    if video_seq.shape != audio_seq.shape:
        raise ValueError(
            f"sequence shapes must match, got {tuple(video_seq.shape)} vs "
            f"{tuple(audio_seq.shape)}")
    logits = (video_seq * audio_seq).sum(dim=-1)
    return torch.softmax(logits, dim=-1)


def _pool(seq: torch.Tensor, weights: torch.Tensor | None) -> torch.Tensor:
    if weights is None:
        return seq.mean(dim=-2)
    return (weights[..., None] * seq).sum(dim=-2)


def multiscale_contrastive_loss(audio_pyr: FeaturePyramid, video_pyr: FeaturePyramid,
                                temperature: float, attention: bool = True,
                                attention_mode: str = "feature",
                                ) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Sum of per-scale InfoNCE terms; returns (total, per-scale terms)."""
    if len(audio_pyr) != len(video_pyr):
        raise ValueError("pyramids must have equal level counts")
    if attention_mode not in ("feature", "loss"):
        raise ValueError(f"unknown attention_mode {attention_mode!r}")
    per_scale: list[torch.Tensor] = []
    for level, (a_level, v_level) in enumerate(zip(audio_pyr.levels, video_pyr.levels),
                                               start=1):
        a_seq, v_seq = a_level.features, v_level.features
        if a_seq.shape[-2] != v_seq.shape[-2]:
            raise ValueError(f"level {level} time lengths differ: "
                             f"{a_seq.shape[-2]} vs {v_seq.shape[-2]}")
        finest = level == 1
        if finest and attention and attention_mode == "loss":
            weights = temporal_attention_weights(v_seq, a_seq)  # (B, T)
            step_weights = weights.mean(dim=0)
            term = a_seq.new_zeros(())
            for t in range(a_seq.shape[-2]):
                sim = cosine_similarity_matrix(a_seq[:, t], v_seq[:, t],
                                               scale_level=level, temperature=temperature)
                term = term + step_weights[t] * info_nce(sim)
        else:
            weights = None
            if finest and attention:
                weights = temporal_attention_weights(v_seq, a_seq)
            sim = cosine_similarity_matrix(_pool(a_seq, weights), _pool(v_seq, weights),
                                           scale_level=level, temperature=temperature)
            term = info_nce(sim)
        per_scale.append(term)
    total = per_scale[0]
    for term in per_scale[1:]:
        total = total + term
    return total, per_scale
