"""Token-sequence encoders and the projected nonlinearity over pooled features.

Two interchangeable encoders sit behind one interface: an adapter for an
externally obtained pretrained transformer checkpoint, and a built-in small
trainable transformer so the whole pipeline runs offline at desk scale.  Both
map a token sequence to one d-vector per token; a pooling layer collapses the
sequence, and project() applies L1 * gelu(L2 * v) to the pooled vector.

Title and abstract always go through the same encoder with shared weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import PAD_ID, TokenSequence
from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 768
    encoder_kind: str = "small_trainable"  # or "pretrained_checkpoint"
    pooling: str = "mean"  # or "first_token"
    vocab_size: int = 4096
    max_positions: int = 512
    num_layers: int = 2
    num_heads: int = 4
    checkpoint_path: str | None = None
    freeze: bool = False

    def __post_init__(self):
        if self.d <= 0:
            raise DomainError(f"embedding dimension must be positive, got {self.d}")
        if self.encoder_kind not in ("small_trainable", "pretrained_checkpoint"):
            raise DomainError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.pooling not in ("mean", "first_token"):
            raise DomainError(f"unknown pooling mode {self.pooling!r}")
        if self.encoder_kind == "small_trainable" and self.d % self.num_heads != 0:
            raise DomainError(
                f"d={self.d} must be divisible by num_heads={self.num_heads}"
            )


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over the last dim, ignoring positions where mask is False.

    mask broadcasts against scores; each unmasked row is a probability
    distribution over the unmasked positions.
    """
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


def masked_mean(x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over the length dim (-2), counting only positions where mask is True."""
    if mask is None:
        return x.mean(dim=-2)
    weights = mask.to(x.dtype).unsqueeze(-1)
    return (x * weights).sum(dim=-2) / weights.sum(dim=-2).clamp(min=1.0)


class SelfAttention(nn.Module):
    def __init__(self, d: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d // num_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        batch, length, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (batch, length, self.num_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        key_mask = None if mask is None else mask[:, None, None, :]
        attended = masked_softmax(scores, key_mask) @ v
        attended = attended.transpose(1, 2).reshape(batch, length, d)
        return self.out(attended)


class TransformerBlock(nn.Module):
    def __init__(self, d: int, num_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, num_heads)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(
            nn.Linear(d, 4 * d),
            nn.GELU(approximate="none"),
            nn.Linear(4 * d, d),
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


class SmallTransformerEncoder(nn.Module):
    """Built-in trainable encoder: token + position embeddings and a short
    stack of bidirectional transformer blocks.  No dropout anywhere, so
    inference is deterministic in both train and eval modes."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.hidden_size = cfg.d
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d, padding_idx=PAD_ID)
        self.position_embedding = nn.Embedding(cfg.max_positions, cfg.d)
        bound = 1.0 / math.sqrt(cfg.d)
        nn.init.uniform_(self.token_embedding.weight, -bound, bound)
        nn.init.uniform_(self.position_embedding.weight, -bound, bound)
        with torch.no_grad():
            self.token_embedding.weight[PAD_ID].zero_()
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d, cfg.num_heads) for _ in range(cfg.num_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise DomainError(
                f"token id outside vocabulary range [0, {self.cfg.vocab_size})"
            )
        if ids.shape[-1] > self.cfg.max_positions:
            raise DomainError(
                f"sequence length {ids.shape[-1]} exceeds max_positions "
                f"{self.cfg.max_positions}"
            )
        positions = torch.arange(ids.shape[-1], device=ids.device)
        x = self.token_embedding(ids) + self.position_embedding(positions)
        for block in self.blocks:
            x = block(x, mask)
        return self.final_norm(x)


class PretrainedEncoderAdapter(nn.Module):
    """Wraps any module mapping ids -> per-token hidden states (for example a
    transformer loaded from a checkpoint directory).  The wrapped module's
    hidden size must equal the configured d."""

    def __init__(self, inner: nn.Module, cfg: EncoderConfig):
        super().__init__()
        hidden = getattr(inner, "hidden_size", None)
        if hidden is None:
            hidden = getattr(getattr(inner, "config", None), "hidden_size", None)
        if hidden is not None and hidden != cfg.d:
            raise ValidationError(
                f"checkpoint hidden size {hidden} does not match configured d={cfg.d}"
            )
        self.cfg = cfg
        self.hidden_size = cfg.d
        self.inner = inner
        if cfg.freeze:
            for param in self.inner.parameters():
                param.requires_grad_(False)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        kwargs = {} if mask is None else {"attention_mask": mask.to(ids.dtype)}
        try:
            out = self.inner(ids, **kwargs)
        except TypeError:
            out = self.inner(ids)
        hidden = getattr(out, "last_hidden_state", out)
        if hidden.shape[-1] != self.cfg.d:
            raise ValidationError(
                f"encoder produced dimension {hidden.shape[-1]}, expected {self.cfg.d}"
            )
        return hidden


def load_encoder(cfg: EncoderConfig) -> nn.Module:
    if cfg.encoder_kind == "small_trainable":
        return SmallTransformerEncoder(cfg)
    if cfg.checkpoint_path is None:
        raise ValidationError("pretrained_checkpoint encoder requires checkpoint_path")
    from transformers import AutoModel  # heavyweight import kept lazy

    inner = AutoModel.from_pretrained(cfg.checkpoint_path, local_files_only=True)
    return PretrainedEncoderAdapter(inner, cfg)


class Projection(nn.Module):
    """v -> L1 * act(L2 * v) with exact (normal-CDF) gelu.

    ``activation`` is a test hook: swapping in the identity makes the whole
    map linear, which lets the wiring be checked independently of the
    nonlinearity.
    """

    def __init__(self, d: int):
        super().__init__()
        bound = 1.0 / math.sqrt(d)
        self.L1 = nn.Parameter(torch.empty(d, d).uniform_(-bound, bound))
        self.L2 = nn.Parameter(torch.empty(d, d).uniform_(-bound, bound))
        self.activation = gelu

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.L2.shape[1]:
            raise DomainError(
                f"projection expects dimension {self.L2.shape[1]}, got {v.shape[-1]}"
            )
        return F.linear(self.activation(F.linear(v, self.L2)), self.L1)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact gelu: x * Phi(x) with Phi the standard normal CDF."""
    return F.gelu(x, approximate="none")


def sequence_tensor(seq: TokenSequence) -> torch.Tensor:
    return torch.tensor(seq.ids, dtype=torch.long).unsqueeze(0)


def encode_tokens(seq: TokenSequence, encoder: nn.Module) -> torch.Tensor:
    """One d-vector per token of a single sequence: (len, d)."""
    return encoder(sequence_tensor(seq)).squeeze(0)


def pool(token_matrix: torch.Tensor, mode: str = "mean") -> torch.Tensor:
    """Collapse (len, d) or (batch, len, d) to a single d-vector (per batch row)."""
    if token_matrix.shape[-2] < 1:
        raise DomainError("cannot pool an empty token matrix")
    if mode == "mean":
        return token_matrix.mean(dim=-2)
    if mode == "first_token":
        return token_matrix.select(-2, 0)
    raise DomainError(f"unknown pooling mode {mode!r}")


def encode_text(
    seq: TokenSequence,
    encoder: nn.Module,
    projection: Projection,
    pooling: str = "mean",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Full text feature for one sequence: the projected pooled d-vector, plus
    the un-pooled token matrix the fusion stage attends over."""
    tokens = encode_tokens(seq, encoder)
    return projection(pool(tokens, pooling)), tokens
