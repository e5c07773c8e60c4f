"""Differentiable objectives driving the protective perturbation.

Four components, all computed from tap captures and identity embeddings:

- identity: push the adversarial embedding away from the reference and
  toward the opposite-gender centroid (constant-offset cosine form).
- context divergence: KL between softmax distributions over the summed
  down-path attention context matrices of reference vs adversarial audio.
- score magnitude: L2 norm of the score prediction (mean over the
  Monte-Carlo draws supplied).
- semantic: per up-path layer, cosine distance to reference features plus
  cosine similarity to pure-noise features, averaged over layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch


class LossError(ValueError):
    """Invalid loss inputs (shape mismatch, missing taps, zero norms, NaNs)."""


@dataclass(frozen=True)
class LossWeights:
    lam_id: float = 1.0
    lam_ctx: float = 4.5
    lam_score: float = 10.0
    lam_sem: float = 0.85

    def __post_init__(self) -> None:
        values = (self.lam_id, self.lam_ctx, self.lam_score, self.lam_sem)
        if any(v < 0 for v in values):
            raise LossError(f"loss weights must be nonnegative, got {values}")
        if not any(v > 0 for v in values):
            raise LossError("at least one loss weight must be positive")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lam_id, self.lam_ctx, self.lam_score, self.lam_sem)

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(*(factor * v for v in self.as_tuple()))


@dataclass
class LossBreakdown:
    l_id: float
    l_ctx: float
    l_score: float
    l_sem: float
    l_total: float
    grad_norms: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "l_id": self.l_id,
            "l_ctx": self.l_ctx,
            "l_score": self.l_score,
            "l_sem": self.l_sem,
            "l_total": self.l_total,
            "grad_norms": dict(self.grad_norms),
        }


def _flat_cosine(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    u, v = u.reshape(-1), v.reshape(-1)
    nu, nv = torch.linalg.vector_norm(u), torch.linalg.vector_norm(v)
    if float(nu) == 0.0 or float(nv) == 0.0:
        raise LossError("cosine undefined for zero-norm tensor")
    return torch.dot(u, v) / (nu * nv)


def identity_loss(e_adv: torch.Tensor, e_ref: torch.Tensor, c_opp: torch.Tensor) -> torch.Tensor:
    """1 - cos(e_adv, e_ref) + cos(e_adv, c_opp)."""
    if e_adv.numel() != e_ref.numel() or e_adv.numel() != c_opp.numel():
        raise LossError("identity embeddings must share a dimension")
    return 1.0 - _flat_cosine(e_adv, e_ref) + _flat_cosine(e_adv, c_opp)


def _summed_context(ctx_by_layer: dict[str, torch.Tensor], layers: Sequence[str]) -> torch.Tensor:
    missing = [l for l in layers if l not in ctx_by_layer]
    if missing:
        raise LossError(f"missing context taps for layers {missing}")
    total = None
    for layer in layers:
        ctx = ctx_by_layer[layer]
        if total is not None and ctx.shape != total.shape:
            raise LossError(f"context shape mismatch at {layer}: {ctx.shape} vs {total.shape}")
        total = ctx if total is None else total + ctx
    return total.reshape(-1)


def context_divergence_loss(
    ctx_ref: dict[str, torch.Tensor],
    ctx_adv: dict[str, torch.Tensor],
    layers: Sequence[str],
) -> torch.Tensor:
    """KL(P_ref || P_adv) over a single softmax of the summed down-path contexts."""
    if not layers:
        raise LossError("context loss needs at least one layer")
    flat_ref = _summed_context(ctx_ref, layers)
    flat_adv = _summed_context(ctx_adv, layers)
    if flat_ref.shape != flat_adv.shape:
        raise LossError(f"context shape mismatch: {flat_ref.shape} vs {flat_adv.shape}")
    log_p_ref = torch.log_softmax(flat_ref, dim=0)
    log_p_adv = torch.log_softmax(flat_adv, dim=0)
    return torch.sum(torch.exp(log_p_ref) * (log_p_ref - log_p_adv))


def score_magnitude_loss(scores: torch.Tensor | Iterable[torch.Tensor]) -> torch.Tensor:
    """Mean L2 norm of score predictions over the supplied Monte-Carlo draws."""
    if isinstance(scores, torch.Tensor):
        scores = [scores]
    scores = list(scores)
    if not scores:
        raise LossError("score magnitude loss needs at least one score tensor")
    return torch.stack([torch.linalg.vector_norm(s.reshape(-1)) for s in scores]).mean()


def semantic_loss(
    feat_adv: dict[str, torch.Tensor],
    feat_ref: dict[str, torch.Tensor],
    feat_noise: dict[str, torch.Tensor],
    layers: Sequence[str],
) -> torch.Tensor:
    """Mean over layers of [1 - cos(f_adv, f_ref) + cos(f_adv, f_noise)]."""
    if not layers:
        raise LossError("semantic loss needs at least one layer")
    terms = []
    for layer in layers:
        try:
            adv, ref, noise = feat_adv[layer], feat_ref[layer], feat_noise[layer]
        except KeyError as exc:
            raise LossError(f"missing feature tap for layer {exc.args[0]!r}") from exc
        terms.append(1.0 - _flat_cosine(adv, ref) + _flat_cosine(adv, noise))
    return torch.stack(terms).mean()


def total_loss(
    l_id: torch.Tensor,
    l_ctx: torch.Tensor,
    l_score: torch.Tensor,
    l_sem: torch.Tensor,
    weights: LossWeights,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted aggregate plus a logging breakdown. Non-finite components abort."""
    components = {"l_id": l_id, "l_ctx": l_ctx, "l_score": l_score, "l_sem": l_sem}
    for name, value in components.items():
        if not torch.isfinite(value):
            raise LossError(f"non-finite loss component {name}: {float(value)}")
    total = (
        weights.lam_id * l_id
        + weights.lam_ctx * l_ctx
        + weights.lam_score * l_score
        + weights.lam_sem * l_sem
    )
    breakdown = LossBreakdown(
        l_id=float(l_id), l_ctx=float(l_ctx), l_score=float(l_score),
        l_sem=float(l_sem), l_total=float(total),
    )
    return total, breakdown
