"""Score-estimation U-Net with linear-attention reference conditioning.

The network denoises mel frames [B, 80, T]. Reference audio enters only
through linear cross-attention in every down/up block: reference features
are projected to keys/values and collapsed into a per-layer context matrix
(key_dim x value_dim); content-side features query that context. There is
no dedicated speaker encoder.

Every attention layer shares the same inner dimensions, so per-layer
context matrices can be summed across the downsampling path. Forward
passes can capture intermediate taps (context matrices, block features,
attention terms, score output) without re-running any layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

ATTN_INNER_DIM = 64


class TapError(KeyError):
    """Requested tap layer id does not exist in this network."""


@dataclass
class TapRequest:
    """Which intermediate values to capture during one forward pass."""

    ctx_layers: frozenset[str] = frozenset()
    feat_layers: frozenset[str] = frozenset()
    attn_layers: frozenset[str] = frozenset()  # captures pre-projection attention output + its query input

    @staticmethod
    def none() -> "TapRequest":
        return TapRequest()


@dataclass
class TapCapture:
    """Per-call tap storage; never shared between forward passes."""

    ctx: dict[str, torch.Tensor] = field(default_factory=dict)
    feat: dict[str, torch.Tensor] = field(default_factory=dict)
    attn_out: dict[str, torch.Tensor] = field(default_factory=dict)
    attn_in: dict[str, torch.Tensor] = field(default_factory=dict)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1))
    args = t[:, None].float() * freqs[None, :] * 100.0  # t in (0,1]; scale to the step grid
    return torch.cat([args.sin(), args.cos()], dim=-1)


class LinearCrossAttention(nn.Module):
    """Context-matrix linear attention conditioning a content stream on a reference."""

    def __init__(self, channels: int, ref_channels: int, inner_dim: int = ATTN_INNER_DIM):
        super().__init__()
        self.inner_dim = inner_dim
        self.to_q = nn.Conv1d(channels, inner_dim, 1, bias=False)
        self.to_k = nn.Conv1d(ref_channels, inner_dim, 1, bias=False)
        self.to_v = nn.Conv1d(ref_channels, inner_dim, 1, bias=False)
        self.to_out = nn.Conv1d(inner_dim, channels, 1)

    def context(self, ref_feat: torch.Tensor) -> torch.Tensor:
        """Key-weighted value aggregation over reference positions -> [B, dk, dv]."""
        k = torch.softmax(self.to_k(ref_feat), dim=-1)  # weights over reference frames
        v = self.to_v(ref_feat)
        return torch.einsum("bit,bjt->bij", k, v)

    def apply_context(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        """Attention output (H_ctx)^T (W_Q phi), pre output-projection."""
        q = self.to_q(x)  # [B, dk, T]
        return torch.einsum("bij,bit->bjt", ctx, q)  # [B, dv, T]

    def forward(self, x: torch.Tensor, ref_feat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        ctx = self.context(ref_feat)
        attn = self.apply_context(x, ctx)
        return x + self.to_out(attn), ctx, attn


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        groups = 8 if in_ch % 8 == 0 and out_ch % 8 == 0 else 1
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class PlainBlock(nn.Module):
    """Time-independent conv block for the reference encoder."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        groups = 8 if out_ch % 8 == 0 else 1
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1, stride=stride)
        self.norm = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.norm(self.conv1(x)))
        return self.conv2(h)


class ReferenceEncoder(nn.Module):
    """Small conv stack producing one reference feature map per U-Net level."""

    def __init__(self, n_mels: int, dims: tuple[int, int]):
        super().__init__()
        self.stem = nn.Conv1d(n_mels, dims[0], 3, padding=1)
        self.block0 = PlainBlock(dims[0], dims[0])
        self.block1 = PlainBlock(dims[0], dims[1], stride=2)

    def forward(self, ref_mel: torch.Tensor) -> list[torch.Tensor]:
        f0 = self.block0(F.silu(self.stem(ref_mel)))
        f1 = self.block1(F.silu(f0))
        return [f0, f1]


class ContentBottleneck(nn.Module):
    """Autoencoding bottleneck that turns the source mel into an average-voice track.

    Per-utterance channel statistics (the speaker's spectral fingerprint) are
    instance-normalized away before encoding, so the reconstruction converges
    to a speaker-averaged rendering of the content; speaker detail must come
    from the reference conditioning path.
    """

    def __init__(self, n_mels: int, bottleneck: int = 4):
        super().__init__()
        self.enc1 = nn.Conv1d(n_mels, 32, 5, stride=2, padding=2)
        self.enc2 = nn.Conv1d(32, bottleneck, 5, stride=2, padding=2)
        self.dec1 = nn.ConvTranspose1d(bottleneck, 32, 4, stride=2, padding=1)
        self.dec2 = nn.ConvTranspose1d(32, n_mels, 4, stride=2, padding=1)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        t = mel.shape[-1]
        x = (mel - mel.mean(dim=-1, keepdim=True)) / (mel.std(dim=-1, keepdim=True) + 1e-5)
        x = F.pad(x, (0, (-t) % 4))
        z = F.silu(self.enc2(F.silu(self.enc1(x))))
        y = self.dec2(F.silu(self.dec1(z)))
        return y[..., :t]


class ScoreUNet(nn.Module):
    """Conditional score network; ``hidden`` sets the deepest channel width."""

    def __init__(self, n_mels: int = 80, hidden: int = 256):
        super().__init__()
        if hidden % 4 != 0:
            raise ValueError(f"hidden width must be divisible by 4, got {hidden}")
        dims = (hidden // 4, hidden // 2)
        self.n_mels = n_mels
        self.hidden = hidden
        self.dims = dims
        time_dim = dims[1]
        self.time_mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))
        self.time_dim = time_dim

        self.stem = nn.Conv1d(2 * n_mels, dims[0], 3, padding=1)
        self.down0_res = ResBlock(dims[0], dims[0], time_dim)
        self.down0_attn = LinearCrossAttention(dims[0], dims[0])
        self.down0_pool = nn.Conv1d(dims[0], dims[1], 4, stride=2, padding=1)
        self.down1_res = ResBlock(dims[1], dims[1], time_dim)
        self.down1_attn = LinearCrossAttention(dims[1], dims[1])
        self.down1_pool = nn.Conv1d(dims[1], hidden, 4, stride=2, padding=1)
        self.mid_res1 = ResBlock(hidden, hidden, time_dim)
        self.mid_res2 = ResBlock(hidden, hidden, time_dim)
        self.up1_unpool = nn.ConvTranspose1d(hidden, dims[1], 4, stride=2, padding=1)
        self.up1_res = ResBlock(2 * dims[1], dims[1], time_dim)
        self.up1_attn = LinearCrossAttention(dims[1], dims[1])
        self.up0_unpool = nn.ConvTranspose1d(dims[1], dims[0], 4, stride=2, padding=1)
        self.up0_res = ResBlock(2 * dims[0], dims[0], time_dim)
        self.up0_attn = LinearCrossAttention(dims[0], dims[0])
        head_groups = 8 if dims[0] % 8 == 0 else 1
        self.head_norm = nn.GroupNorm(head_groups, dims[0])
        self.head = nn.Conv1d(dims[0], n_mels, 3, padding=1)

        self.eval_count = 0  # network evaluations, for single-pass assertions

    # layer id -> (attention module, reference level index)
    def _attention_map(self) -> dict[str, tuple[LinearCrossAttention, int]]:
        return {
            "down.0.attn": (self.down0_attn, 0),
            "down.1.attn": (self.down1_attn, 1),
            "up.1.attn": (self.up1_attn, 1),
            "up.0.attn": (self.up0_attn, 0),
        }

    @property
    def down_attention_layers(self) -> tuple[str, ...]:
        return ("down.0.attn", "down.1.attn")

    @property
    def up_attention_layers(self) -> tuple[str, ...]:
        return ("up.1.attn", "up.0.attn")

    @property
    def block_layers(self) -> tuple[str, ...]:
        return ("down.0", "down.1", "mid", "up.1", "up.0")

    @property
    def up_feature_layers(self) -> tuple[str, ...]:
        return ("up.1", "up.0")

    def layer_registry(self) -> dict[str, list[str]]:
        return {
            "down_attention": list(self.down_attention_layers),
            "up_attention": list(self.up_attention_layers),
            "blocks": list(self.block_layers),
            "up_features": list(self.up_feature_layers),
        }

    def validate_taps(self, taps: TapRequest) -> None:
        attn_ids = set(self._attention_map())
        block_ids = set(self.block_layers)
        for layer in taps.ctx_layers | taps.attn_layers:
            if layer not in attn_ids:
                raise TapError(f"unknown attention layer id {layer!r}; known: {sorted(attn_ids)}")
        for layer in taps.feat_layers:
            if layer not in block_ids:
                raise TapError(f"unknown block layer id {layer!r}; known: {sorted(block_ids)}")

    def _attn_step(
        self,
        layer_id: str,
        attn: LinearCrossAttention,
        h: torch.Tensor,
        ref_feat: torch.Tensor,
        taps: TapRequest,
        capture: TapCapture,
    ) -> torch.Tensor:
        out, ctx, attn_out = attn(h, ref_feat)
        if layer_id in taps.ctx_layers:
            capture.ctx[layer_id] = ctx
        if layer_id in taps.attn_layers:
            capture.attn_out[layer_id] = attn_out
            capture.attn_in[layer_id] = h
        return out

    def forward(
        self,
        x_t: torch.Tensor,
        content: torch.Tensor,
        ref_feats: list[torch.Tensor],
        t: float | torch.Tensor,
        taps: TapRequest | None = None,
        capture: TapCapture | None = None,
    ) -> torch.Tensor:
        """Score prediction for x_t; optionally captures requested taps."""
        taps = taps or TapRequest.none()
        capture = capture if capture is not None else TapCapture()
        self.validate_taps(taps)
        self.eval_count += 1

        n_frames = x_t.shape[-1]
        pad = (-n_frames) % 4
        if pad:
            x_t = F.pad(x_t, (0, pad))
            content = F.pad(content, (0, pad))

        t_vec = t.float() if isinstance(t, torch.Tensor) else torch.full((x_t.shape[0],), float(t))
        temb = self.time_mlp(sinusoidal_embedding(t_vec, self.time_dim))

        h = self.stem(torch.cat([x_t, content], dim=1))
        h = self.down0_res(h, temb)
        h = self._attn_step("down.0.attn", self.down0_attn, h, ref_feats[0], taps, capture)
        if "down.0" in taps.feat_layers:
            capture.feat["down.0"] = h
        skip0 = h
        h = self.down0_pool(h)
        h = self.down1_res(h, temb)
        h = self._attn_step("down.1.attn", self.down1_attn, h, ref_feats[1], taps, capture)
        if "down.1" in taps.feat_layers:
            capture.feat["down.1"] = h
        skip1 = h
        h = self.down1_pool(h)
        h = self.mid_res2(self.mid_res1(h, temb), temb)
        if "mid" in taps.feat_layers:
            capture.feat["mid"] = h
        h = self.up1_unpool(h)
        h = self.up1_res(torch.cat([h, skip1], dim=1), temb)
        h = self._attn_step("up.1.attn", self.up1_attn, h, ref_feats[1], taps, capture)
        if "up.1" in taps.feat_layers:
            capture.feat["up.1"] = h
        h = self.up0_unpool(h)
        h = self.up0_res(torch.cat([h, skip0], dim=1), temb)
        h = self._attn_step("up.0.attn", self.up0_attn, h, ref_feats[0], taps, capture)
        if "up.0" in taps.feat_layers:
            capture.feat["up.0"] = h
        out = self.head(F.silu(self.head_norm(h)))
        if pad:
            out = out[..., :n_frames]
        return out
