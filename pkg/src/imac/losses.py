"""Training objective: cross-entropy plus a weighted supervised contrastive
term over the fused features.

    L_o = L_c + alpha * L_s

L_c is mean-reduced over the batch by default so its magnitude is
batch-size invariant (sum reduction is available via config).  L_s follows
the supervised-contrastive convention: anchors whose positive set is empty
are excluded from the average and the loss is 0 when no anchor has one.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DomainError

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    tau: float = 0.1
    anchor_normalization: str = "mean_over_anchors"
    feature_normalization: str = "l2"  # or "none"
    reduction: str = "mean"  # or "sum"

    def __post_init__(self):
        if self.alpha < 0:
            raise DomainError(f"alpha must be nonnegative, got {self.alpha}")
        if self.tau <= 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if self.anchor_normalization != "mean_over_anchors":
            raise DomainError(
                f"unknown anchor_normalization {self.anchor_normalization!r}"
            )
        if self.feature_normalization not in ("l2", "none"):
            raise DomainError(
                f"unknown feature_normalization {self.feature_normalization!r}"
            )
        if self.reduction not in ("mean", "sum"):
            raise DomainError(f"unknown reduction {self.reduction!r}")


@dataclass
class LossBatch:
    """One mini-batch as the losses see it: fused features F_u, integer
    labels, and the softmax probabilities."""

    features: torch.Tensor  # (batch, d)
    labels: torch.Tensor  # (batch,)
    probabilities: torch.Tensor  # (batch, num_classes)

    def __post_init__(self):
        if self.features.ndim != 2 or self.probabilities.ndim != 2:
            raise DomainError("features and probabilities must be 2-d tensors")
        n = self.features.shape[0]
        if n < 1:
            raise DomainError("batch must contain at least one element")
        if self.labels.shape != (n,) or self.probabilities.shape[0] != n:
            raise DomainError("features, labels, and probabilities lengths differ")
        probs = self.probabilities.detach()
        if (probs < -1e-6).any() or (probs.sum(dim=-1) - 1.0).abs().max() > 1e-4:
            raise DomainError("probabilities must lie on the simplex")
        labels = self.labels.detach()
        if (labels < 0).any() or (labels >= self.probabilities.shape[1]).any():
            raise DomainError("labels out of range for the probability columns")

    def __len__(self) -> int:
        return self.features.shape[0]


def cross_entropy(batch: LossBatch, cfg: LossConfig | None = None) -> torch.Tensor:
    """Negative log likelihood of the true class, clamped away from log(0)."""
    cfg = cfg or LossConfig()
    rows = torch.arange(len(batch), device=batch.probabilities.device)
    p_true = batch.probabilities[rows, batch.labels].clamp(min=PROB_CLAMP)
    losses = -torch.log(p_true)
    return losses.mean() if cfg.reduction == "mean" else losses.sum()


def supcon(batch: LossBatch, cfg: LossConfig | None = None) -> torch.Tensor:
    """Supervised contrastive loss over the batch features.

    For each anchor i with positive set P(i) (same-label, non-self elements):

        -(1/|P(i)|) sum_{p in P(i)} log( exp(z_i.z_p / tau) / sum_{a != i} exp(z_i.z_a / tau) )

    averaged over anchors with nonempty P(i).  Logits are shifted by their
    row max (a per-row constant, so the value is unchanged) before exp so
    large dot products cannot overflow.
    """
    cfg = cfg or LossConfig()
    n = len(batch)
    if n < 2:
        raise DomainError(f"supervised contrastive loss needs batch size >= 2, got {n}")
    z = batch.features
    if cfg.feature_normalization == "l2":
        z = z / z.norm(dim=-1, keepdim=True).clamp(min=PROB_CLAMP)
    logits = z @ z.T / cfg.tau

    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    not_self = ~eye
    row_max = logits.masked_fill(eye, float("-inf")).max(dim=1, keepdim=True).values
    shifted = logits - row_max.detach()
    denom = (shifted.exp() * not_self).sum(dim=1, keepdim=True)
    log_prob = shifted - denom.log()

    positives = (batch.labels[:, None] == batch.labels[None, :]) & not_self
    pos_counts = positives.sum(dim=1)
    anchors = pos_counts > 0
    if not anchors.any():
        return torch.zeros((), dtype=z.dtype, device=z.device)
    per_anchor = -(log_prob * positives).sum(dim=1)[anchors] / pos_counts[anchors]
    return per_anchor.mean()


def total_loss(batch: LossBatch, cfg: LossConfig | None = None) -> torch.Tensor:
    """L_o = L_c + alpha * L_s.  With alpha = 0 the contrastive term is not
    evaluated at all, so the ablation runs on batches of any size."""
    cfg = cfg or LossConfig()
    ce = cross_entropy(batch, cfg)
    if cfg.alpha == 0:
        return ce
    return ce + cfg.alpha * supcon(batch, cfg)
