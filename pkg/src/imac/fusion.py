"""The IMAC network head.

Pipeline over one (title, abstract, metadata) triple:

    F_t, F_a   projected pooled text features (shared encoder + projection)
    F_att      title-to-abstract cross attention, mean-pooled, normed, dropout
    F_o        residual sum F_t + F_a
    F_aff      F_o + F_att
    M          MS-CAM gate from two bottleneck context branches on F_aff
    F_txt      M (*) F_o + (1 - M) (*) F_att, component-wise convex blend
    F_m        embedded metadata, fc0: 7 -> d
    F_u        fc1(F_txt (*) F_m)
    out, p     linear classifier logits and their softmax

Ablation switches are config flags, not code forks: no_fusion bypasses the
attention and gating stages entirely (F_txt = F_o), pooled_attention swaps the
token-level attention for the degenerate pooled-vector reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import METADATA_COLUMNS, PAD_ID, FeatureBundle, MetadataVector
from .encoder import (
    EncoderConfig,
    Projection,
    load_encoder,
    masked_mean,
    masked_softmax,
)
from .errors import DomainError


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    num_classes: int = 2
    metadata_dim: int = len(METADATA_COLUMNS)
    ms_cam_reduction: int = 4
    dropout_rate: float = 0.1
    no_fusion: bool = False
    pooled_attention: bool = False

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DomainError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.encoder.d % self.ms_cam_reduction != 0:
            raise DomainError(
                f"d={self.encoder.d} must be divisible by the MS-CAM reduction "
                f"ratio {self.ms_cam_reduction}"
            )
        if self.no_fusion and self.pooled_attention:
            raise DomainError("no_fusion and pooled_attention are mutually exclusive")


class TextAttentionFusion(nn.Module):
    """Shared-information extractor between title and abstract.

    Title token vectors act as queries against abstract token keys/values;
    softmax runs over abstract positions, scaled by 1/sqrt(d).  The attended
    sequence is mean-pooled over title positions, layer-normalized, and passed
    through inverted dropout (a no-op in eval mode).
    """

    def __init__(self, d: int, dropout_rate: float = 0.1):
        super().__init__()
        bound = 1.0 / math.sqrt(d)
        self.W_Q = nn.Parameter(torch.empty(d, d).uniform_(-bound, bound))
        self.W_K = nn.Parameter(torch.empty(d, d).uniform_(-bound, bound))
        self.W_V = nn.Parameter(torch.empty(d, d).uniform_(-bound, bound))
        self.norm = nn.LayerNorm(d)
        self.dropout_rate = dropout_rate

    def scores(
        self,
        title_tokens: torch.Tensor,
        abstract_tokens: torch.Tensor,
        abstract_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Attention weight matrix, one distribution over abstract positions
        per title position."""
        if title_tokens.shape[-1] != self.W_Q.shape[0]:
            raise DomainError(
                f"expected token dimension {self.W_Q.shape[0]}, "
                f"got {title_tokens.shape[-1]}"
            )
        if abstract_tokens.shape[-1] != title_tokens.shape[-1]:
            raise DomainError("title and abstract token dimensions differ")
        d = title_tokens.shape[-1]
        q = title_tokens @ self.W_Q
        k = abstract_tokens @ self.W_K
        logits = q @ k.transpose(-2, -1) / math.sqrt(d)
        key_mask = None if abstract_mask is None else abstract_mask.unsqueeze(-2)
        return masked_softmax(logits, key_mask)

    def forward(
        self,
        title_tokens: torch.Tensor,
        abstract_tokens: torch.Tensor,
        title_mask: torch.Tensor | None = None,
        abstract_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        weights = self.scores(title_tokens, abstract_tokens, abstract_mask)
        attended = weights @ (abstract_tokens @ self.W_V)
        pooled = masked_mean(attended, title_mask)
        return F.dropout(self.norm(pooled), self.dropout_rate, self.training)

    def forward_pooled(self, F_t: torch.Tensor, F_a: torch.Tensor) -> torch.Tensor:
        """Degenerate reading on already-pooled vectors: the softmax runs over
        a single position and is identically 1, so the queries and keys carry
        no gradient.  Kept only as an ablation."""
        q = F_t @ self.W_Q
        k = F_a @ self.W_K
        score = (q * k).sum(dim=-1, keepdim=True) / math.sqrt(F_t.shape[-1])
        weight = torch.softmax(score.unsqueeze(-1), dim=-1).squeeze(-1)
        attended = weight * (F_a @ self.W_V)
        return F.dropout(self.norm(attended), self.dropout_rate, self.training)


def attention_fuse(
    title_tokens: torch.Tensor,
    abstract_tokens: torch.Tensor,
    params: TextAttentionFusion,
) -> torch.Tensor:
    """Single-pair convenience wrapper: (L_t, d) and (L_a, d) matrices in,
    d-vector out."""
    return params(title_tokens.unsqueeze(0), abstract_tokens.unsqueeze(0)).squeeze(0)


def residual_merge(
    F_t: torch.Tensor, F_a: torch.Tensor, F_att: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    F_o = F_t + F_a
    return F_o, F_o + F_att


class MsCam(nn.Module):
    """Multi-scale channel attention over a d-vector treated as d channels
    with unit spatial extent.

    Two bias-free bottleneck branches (down-project to d/r, rectify, project
    back) feed a component-wise logistic gate: a local branch on the vector
    itself and a global branch on its average broadcast back to d components.
    Zero weights give exactly M = 0.5 everywhere.
    """

    def __init__(self, d: int, reduction: int = 4):
        super().__init__()
        if d % reduction != 0:
            raise DomainError(f"d={d} not divisible by reduction ratio {reduction}")
        hidden = d // reduction
        self.local = nn.Sequential(
            nn.Linear(d, hidden, bias=False),
            nn.ReLU(),
            nn.Linear(hidden, d, bias=False),
        )
        self.global_context = nn.Sequential(
            nn.Linear(d, hidden, bias=False),
            nn.ReLU(),
            nn.Linear(hidden, d, bias=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        broadcast = x.mean(dim=-1, keepdim=True).expand_as(x)
        return torch.sigmoid(self.local(x) + self.global_context(broadcast))


def ms_cam(F_aff: torch.Tensor, params: MsCam) -> torch.Tensor:
    return params(F_aff)


def aff_fuse(F_o: torch.Tensor, F_att: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    """Gated blend; each output component lies between the corresponding
    components of F_o and F_att because M is strictly inside (0, 1)."""
    return M * F_o + (1.0 - M) * F_att


class Head(nn.Module):
    """Metadata embedding, text-metadata fusion, and the linear classifier."""

    def __init__(self, d: int, metadata_dim: int = len(METADATA_COLUMNS), num_classes: int = 2):
        super().__init__()
        self.fc0 = nn.Linear(metadata_dim, d)
        self.fc1 = nn.Linear(d, d)
        self.L = nn.Linear(d, num_classes)

    def forward(self, F_txt: torch.Tensor, metadata: torch.Tensor) -> tuple[
        torch.Tensor, torch.Tensor, torch.Tensor
    ]:
        F_m = self.fc0(metadata)
        F_u = self.fc1(F_txt * F_m)
        return F_m, F_u, self.L(F_u)


def metadata_fuse(
    F_txt: torch.Tensor, x_m: MetadataVector, params: Head
) -> tuple[torch.Tensor, torch.Tensor]:
    """(F_m, F_u) for one sample; rejects unnormalized metadata so raw-scale
    values cannot leak into the head."""
    if not x_m.normalized:
        raise DomainError("metadata must be normalized before fusion")
    vec = torch.tensor(x_m.values, dtype=F_txt.dtype)
    F_m = params.fc0(vec)
    F_u = params.fc1(F_txt * F_m)
    return F_m, F_u


def classify(F_u: torch.Tensor, params: Head) -> tuple[torch.Tensor, torch.Tensor]:
    logits = params.L(F_u)
    return logits, torch.softmax(logits, dim=-1)


@dataclass
class ForwardTrace:
    """Every intermediate feature of one forward pass, in pipeline order."""

    F_t: torch.Tensor
    F_a: torch.Tensor
    F_att: torch.Tensor
    F_o: torch.Tensor
    F_aff: torch.Tensor
    F_txt: torch.Tensor
    F_m: torch.Tensor
    F_u: torch.Tensor
    out: torch.Tensor
    p: torch.Tensor


class ImacModel(nn.Module):
    """Full network; submodule names are the checkpoint parameter groups:
    encoder, projection, attention, ms_cam, head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.encoder.d
        self.encoder = load_encoder(cfg.encoder)
        self.projection = Projection(d)
        self.attention = TextAttentionFusion(d, cfg.dropout_rate)
        self.ms_cam = MsCam(d, cfg.ms_cam_reduction)
        self.head = Head(d, cfg.metadata_dim, cfg.num_classes)

    def _pool(self, tokens: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        if self.cfg.encoder.pooling == "first_token":
            return tokens.select(-2, 0)
        return masked_mean(tokens, mask)

    def forward(
        self,
        title_ids: torch.Tensor,
        abstract_ids: torch.Tensor,
        metadata: torch.Tensor,
        title_mask: torch.Tensor | None = None,
        abstract_mask: torch.Tensor | None = None,
    ) -> ForwardTrace:
        if metadata.shape[-1] != self.cfg.metadata_dim:
            raise DomainError(
                f"expected {self.cfg.metadata_dim} metadata components, "
                f"got {metadata.shape[-1]}"
            )
        if title_mask is None:
            title_mask = title_ids != PAD_ID
        if abstract_mask is None:
            abstract_mask = abstract_ids != PAD_ID

        title_tokens = self.encoder(title_ids, title_mask)
        abstract_tokens = self.encoder(abstract_ids, abstract_mask)
        F_t = self.projection(self._pool(title_tokens, title_mask))
        F_a = self.projection(self._pool(abstract_tokens, abstract_mask))

        if self.cfg.no_fusion:
            F_att = torch.zeros_like(F_t)
        elif self.cfg.pooled_attention:
            F_att = self.attention.forward_pooled(F_t, F_a)
        else:
            F_att = self.attention(
                title_tokens, abstract_tokens, title_mask, abstract_mask
            )
        F_o, F_aff = residual_merge(F_t, F_a, F_att)
        if self.cfg.no_fusion:
            F_txt = F_o
        else:
            F_txt = aff_fuse(F_o, F_att, self.ms_cam(F_aff))

        F_m, F_u, out = self.head(F_txt, metadata)
        return ForwardTrace(
            F_t=F_t,
            F_a=F_a,
            F_att=F_att,
            F_o=F_o,
            F_aff=F_aff,
            F_txt=F_txt,
            F_m=F_m,
            F_u=F_u,
            out=out,
            p=torch.softmax(out, dim=-1),
        )

    def forward_bundle(self, bundle: FeatureBundle) -> ForwardTrace:
        """Single-sample forward; trace fields come back as plain d-vectors."""
        if not bundle.metadata.normalized:
            raise DomainError("metadata must be normalized before fusion")
        device = self.head.L.weight.device
        dtype = self.head.L.weight.dtype
        trace = self(
            torch.tensor(bundle.title.ids, dtype=torch.long, device=device).unsqueeze(0),
            torch.tensor(bundle.abstract.ids, dtype=torch.long, device=device).unsqueeze(0),
            torch.tensor(bundle.metadata.values, dtype=dtype, device=device).unsqueeze(0),
        )
        return ForwardTrace(
            **{name: getattr(trace, name).squeeze(0) for name in trace.__dataclass_fields__}
        )
