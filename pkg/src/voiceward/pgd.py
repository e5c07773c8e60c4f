"""Projected sign-gradient optimization of the protective perturbation.

Implements the full optimization loop: reference-side features are
precomputed once, then each iteration averages input-gradients of the
joint objective over several independent (timestep, diffusion-noise) draws,
ascends by alpha * sign(mean gradient), projects onto the L-inf ball, and
clamps to valid audio amplitudes. Losses are only ever evaluated at the
early timesteps t <= t_adv.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import Waveform
from .identity import GenderCentroid, IdentityExtractor
from .losses import (
    LossBreakdown,
    LossWeights,
    context_divergence_loss,
    identity_loss,
    score_magnitude_loss,
    semantic_loss,
    total_loss,
)
from .mel import mel_spectrogram, to_torch_mel_layout
from .unet import TapRequest
from .vc import VoiceConverter


class PgdConfigError(ValueError):
    """Configuration violates the optimizer's invariants."""


class OptimizationAborted(RuntimeError):
    """Non-finite gradient; carries the loss trace up to the failing iteration."""

    def __init__(self, message: str, iteration: int, trace: list[LossBreakdown]):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.002
    alpha: float = 4e-5
    iterations: int = 50
    grad_repeats: int = 5
    t_adv: int = 6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise PgdConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.alpha <= 0:
            raise PgdConfigError(f"alpha must be positive, got {self.alpha}")
        if self.iterations < 1:
            raise PgdConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.grad_repeats < 1:
            raise PgdConfigError(f"grad_repeats must be >= 1, got {self.grad_repeats}")
        if self.t_adv < 1:
            raise PgdConfigError(f"t_adv must be >= 1, got {self.t_adv}")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "iterations": self.iterations,
            "grad_repeats": self.grad_repeats,
            "t_adv": self.t_adv,
            "seed": self.seed,
        }


@dataclass
class AdversarialState:
    x_adv: Waveform
    iterations_run: int
    trace: list[LossBreakdown] = field(default_factory=list)
    wall_seconds: float = 0.0

    def max_deviation(self, x_ref: Waveform) -> float:
        return float(np.max(np.abs(self.x_adv.samples - x_ref.samples)))


def pgd_step(
    x_ref: torch.Tensor,
    delta: torch.Tensor,
    mean_grad: torch.Tensor,
    alpha: float,
    epsilon: float,
) -> torch.Tensor:
    """One ascent step: sign update, epsilon projection, amplitude clamp."""
    delta = delta + alpha * torch.sign(mean_grad)
    delta = torch.clamp(delta, -epsilon, epsilon)
    x_adv = torch.clamp(x_ref + delta, -1.0, 1.0)
    return x_adv - x_ref


def protect(
    x_ref: Waveform,
    x_src: Waveform,
    model: VoiceConverter,
    extractor: IdentityExtractor,
    c_opp: GenderCentroid,
    cfg: PgdConfig,
    weights: LossWeights | None = None,
) -> AdversarialState:
    """Optimize a protective perturbation for x_ref against cloning from x_src."""
    weights = weights or LossWeights()
    if cfg.t_adv > model.schedule.n_steps:
        raise PgdConfigError(f"t_adv {cfg.t_adv} exceeds schedule steps {model.schedule.n_steps}")
    start = time.perf_counter()
    model.eval().requires_grad_(False)
    extractor.eval().requires_grad_(False)

    generator = torch.Generator().manual_seed(cfg.seed)
    x_ref_t = torch.from_numpy(x_ref.samples).float()[None]
    m_src = mel_spectrogram(x_src)
    m_src_t = to_torch_mel_layout(m_src)
    down_layers = model.unet.down_attention_layers
    up_layers = model.unet.up_feature_layers

    with torch.no_grad():
        e_ref = extractor.embed_samples(x_ref_t)
        ref_mel_clean = model.waveform_to_mel(x_ref_t)
        ctx_ref = model.reference_contexts(ref_mel_clean)
        ref_bundle = model.forward_with_taps(
            m_src_t, ref_mel_clean, cfg.t_adv,
            TapRequest(feat_layers=frozenset(up_layers)), generator=generator,
        )
        f_ref = ref_bundle.feat_by_layer
        f_noise = model.noise_features(m_src.n_frames, cfg.t_adv, generator)
    c_opp_t = torch.from_numpy(np.asarray(c_opp.vector)).float()

    tap_request = TapRequest(ctx_layers=frozenset(down_layers), feat_layers=frozenset(up_layers))
    delta = torch.zeros_like(x_ref_t)
    trace: list[LossBreakdown] = []

    for iteration in range(1, cfg.iterations + 1):
        grads: list[torch.Tensor] = []
        component_sums = np.zeros(5)
        grad_norms: dict[str, float] = {}
        for repeat in range(cfg.grad_repeats):
            t_index = int(torch.randint(1, cfg.t_adv + 1, (1,), generator=generator))
            delta_var = delta.detach().clone().requires_grad_(True)
            x_adv = x_ref_t + delta_var
            e_adv = extractor.embed_samples(x_adv)
            mel_adv = model.waveform_to_mel(x_adv)
            bundle = model.forward_with_taps(m_src_t, mel_adv, t_index, tap_request, generator=generator)

            l_id = identity_loss(e_adv, e_ref, c_opp_t)
            l_ctx = context_divergence_loss(ctx_ref, bundle.ctx_by_layer, down_layers)
            l_score = score_magnitude_loss(bundle.score)
            l_sem = semantic_loss(bundle.feat_by_layer, f_ref, f_noise, up_layers)
            l_tot, breakdown = total_loss(l_id, l_ctx, l_score, l_sem, weights)
            component_sums += (breakdown.l_id, breakdown.l_ctx, breakdown.l_score,
                               breakdown.l_sem, breakdown.l_total)

            if repeat == 0:
                for name, comp in (("id", l_id), ("ctx", l_ctx), ("score", l_score), ("sem", l_sem)):
                    (g,) = torch.autograd.grad(comp, delta_var, retain_graph=True)
                    grad_norms[name] = float(torch.linalg.vector_norm(g))
            (grad,) = torch.autograd.grad(l_tot, delta_var)
            if not torch.isfinite(grad).all():
                raise OptimizationAborted(
                    f"non-finite gradient at iteration {iteration} repeat {repeat}",
                    iteration, trace,
                )
            grads.append(grad)

        mean_grad = torch.stack(grads).mean(dim=0)
        delta = pgd_step(x_ref_t, delta, mean_grad, cfg.alpha, cfg.epsilon)
        means = component_sums / cfg.grad_repeats
        trace.append(LossBreakdown(*(float(m) for m in means), grad_norms=grad_norms))

    x_adv_samples = (x_ref_t + delta)[0].double().numpy()
    state = AdversarialState(
        x_adv=Waveform(np.clip(x_adv_samples, -1.0, 1.0), x_ref.sample_rate),
        iterations_run=cfg.iterations,
        trace=trace,
        wall_seconds=time.perf_counter() - start,
    )
    return state


def random_noise_baseline(x_ref: Waveform, epsilon: float, seed: int = 0) -> Waveform:
    """Gaussian noise clipped elementwise to the same L-inf budget."""
    if epsilon < 0:
        raise PgdConfigError(f"epsilon must be nonnegative, got {epsilon}")
    rng = np.random.default_rng(seed)
    noise = np.clip(epsilon * rng.standard_normal(len(x_ref.samples)), -epsilon, epsilon)
    return Waveform(np.clip(x_ref.samples + noise, -1.0, 1.0), x_ref.sample_rate)
