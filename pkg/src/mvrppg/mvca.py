"""Multi-view correlation-aware fusion.

Flow-noise weighted aggregation of the per-view ST-rPPG blocks, cross-view
attention over appearance features followed by a temporal transformer layer,
a scalar sigmoid gate between the two paths, and a pointwise projection head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .diffcore import expect_shape, xavier_init_
from .dualstream import RhythmStream, VisualStream
from .errors import GraphError, NumericError, ParameterError

WEIGHT_EPS = 1e-6


def flow_noise_weights(scores, eps: float = WEIGHT_EPS, available=None) -> np.ndarray:
    """Inverse-noise view weights ``(1/(n_v+eps)) / sum_i 1/(n_i+eps)`` along the last axis.

    Views marked unavailable get weight 0 and the rest are renormalised.
    """
    n = np.asarray(scores, dtype=np.float64)
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ParameterError("flow-noise scores must be finite and non-negative")
    inv = 1.0 / (n + eps)
    if available is not None:
        avail = np.broadcast_to(np.asarray(available, dtype=bool), n.shape)
        if not np.all(avail.any(axis=-1)):
            raise ParameterError("at least one view must be available")
        inv = np.where(avail, inv, 0.0)
    return inv / inv.sum(axis=-1, keepdims=True)


def weighted_view_sum(S_views: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """``S_views`` B x V x N x T, ``w`` B x V -> B x N x T."""
    expect_shape(S_views, (None, None, None, None), "aggregate_st")
    if w.shape != S_views.shape[:2]:
        raise ParameterError(f"aggregate_st: weights {tuple(w.shape)} do not match views {tuple(S_views.shape[:2])}")
    return torch.einsum("bv,bvnt->bnt", w.to(S_views.dtype), S_views)


class Aggregator(nn.Module):
    """Weighted view sum followed by a length-preserving kernel-3 temporal conv (identity at init)."""

    def __init__(self, N: int = 4):
        super().__init__()
        self.conv = nn.Conv1d(N, N, 3, padding=1)
        with torch.no_grad():
            self.conv.weight.zero_()
            self.conv.weight[:, :, 1] = torch.eye(N)
            self.conv.bias.zero_()

    def forward(self, S_views: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        return self.conv(weighted_view_sum(S_views, w))


def aggregate_st(S_l, S_c, S_r, w, conv: nn.Conv1d | None = None) -> torch.Tensor:
    shapes = {tuple(S_l.shape), tuple(S_c.shape), tuple(S_r.shape)}
    if len(shapes) != 1:
        raise ParameterError(f"aggregate_st: view shapes differ: {sorted(shapes)}")
    w = torch.as_tensor(w, dtype=S_l.dtype)
    if w.dim() == 1:
        w = w.expand(S_l.shape[0], 3)
    s = weighted_view_sum(torch.stack([S_l, S_c, S_r], 1), w)
    return s if conv is None else conv(s)


class CrossViewAttention(nn.Module):
    """Per-time-step attention across views, mean over views, temporal transformer, linear to N tokens."""

    def __init__(self, D: int = 16, N: int = 4, heads: int = 2):
        super().__init__()
        self.D = D
        self.W_Q = nn.Linear(D, D, bias=False)
        self.W_K = nn.Linear(D, D, bias=False)
        self.W_V = nn.Linear(D, D, bias=False)
        self.temporal = nn.TransformerEncoderLayer(D, heads, 2 * D, dropout=0.0, batch_first=True)
        self.to_tokens = nn.Linear(D, N)
        xavier_init_(self)
        self.last_attention: torch.Tensor | None = None

    def view_attention(self, F_views: torch.Tensor) -> torch.Tensor:
        """``B x V x D x T`` -> attended ``B x T x V x D``; stores the ``B x T x V x V`` map."""
        expect_shape(F_views, (None, None, self.D, None), "cross_view_attention")
        x = F_views.permute(0, 3, 1, 2)  # B T V D
        q, k, v = self.W_Q(x), self.W_K(x), self.W_V(x)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.D)
        if not torch.all(torch.isfinite(logits)):
            bad = (~torch.isfinite(logits)).nonzero()
            raise NumericError(
                f"cross_view_attention: {bad.shape[0]} non-finite logits, first at (b, t, i, j) = "
                f"{tuple(bad[0].tolist())}; max |F| = {float(F_views.abs().nan_to_num(posinf=0).max()):.3g}"
            )
        attn = torch.softmax(logits, dim=-1)
        self.last_attention = attn.detach()
        return attn @ v

    def forward(self, F_views: torch.Tensor) -> torch.Tensor:
        fused = self.view_attention(F_views).mean(dim=2)  # B T D
        h = self.temporal(fused)
        return self.to_tokens(h).transpose(1, 2)  # B N T


def cross_view_attention(F_views: torch.Tensor, module: CrossViewAttention) -> torch.Tensor:
    return module(F_views)


def gated_fusion(S: torch.Tensor, S_prime: torch.Tensor, beta) -> torch.Tensor:
    if S.shape != S_prime.shape:
        raise ParameterError(f"gated_fusion: {tuple(S.shape)} vs {tuple(S_prime.shape)}")
    g = torch.sigmoid(torch.as_tensor(beta, dtype=S.dtype))
    return g * S + (1 - g) * S_prime


@dataclass
class SegmentTriplets:
    f: torch.Tensor  # n x L
    f_prime: torch.Tensor  # n x L
    g: torch.Tensor  # n x L
    K: int
    starts: list[int]

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def length(self) -> int:
        return self.f.shape[1]


def split_segments(x: torch.Tensor, K: int) -> torch.Tensor:
    """``... x T`` -> ``... x K x L`` with ``L = T // K``; the tail is dropped."""
    T = x.shape[-1]
    if K < 1 or K > T:
        raise ParameterError(f"K must be in [1, T={T}], got {K}")
    L = T // K
    return x[..., : K * L].reshape(*x.shape[:-1], K, L)


def segment_sampling(S: torch.Tensor, S_prime: torch.Tensor, gt, K: int = 4) -> SegmentTriplets:
    """Split each of the N token traces (and the aligned ground truth) into K segments.

    ``S``, ``S_prime``: B x N x T (or N x T); ``gt``: B x T (or T). Triplets are
    ordered batch, token, segment.
    """
    if S.shape != S_prime.shape:
        raise ParameterError("segment_sampling: S and S' differ in shape")
    gt = torch.as_tensor(getattr(gt, "samples", gt), dtype=S.dtype)
    if S.dim() == 2:
        S, S_prime, gt = S[None], S_prime[None], gt.reshape(1, -1)
    B, N, T = S.shape
    if gt.shape != (B, T):
        raise ParameterError(f"segment_sampling: ground truth {tuple(gt.shape)} vs B x T = {(B, T)}")
    f = split_segments(S, K).reshape(B * N * K, -1)
    fp = split_segments(S_prime, K).reshape(B * N * K, -1)
    g = split_segments(gt, K)[:, None].expand(B, N, K, -1).reshape(B * N * K, -1)
    L = T // K
    return SegmentTriplets(f, fp, g, K, [k * L for k in range(K)])


class ProjectionHead(nn.Module):
    """Per-token pointwise 1-D convolution (identity at init)."""

    def __init__(self, N: int = 4):
        super().__init__()
        self.conv = nn.Conv1d(N, N, 1, groups=N)
        with torch.no_grad():
            self.conv.weight.fill_(1.0)
            self.conv.bias.zero_()

    def forward(self, U: torch.Tensor) -> torch.Tensor:
        return self.conv(U)


def token_mean(Y: torch.Tensor) -> torch.Tensor:
    return Y.mean(dim=-2)


def predict_rppg(Y: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Token mean of ``Y`` (B x N x T), standardised per sample."""
    p = token_mean(Y)
    p = p - p.mean(dim=-1, keepdim=True)
    return p / (p.std(dim=-1, unbiased=False, keepdim=True) + eps)


@dataclass
class ModelConfig:
    D: int = 16
    P: int = 2
    heads: int = 2
    beta_init: float = 0.5
    use_mvca: bool = True

    @property
    def N(self) -> int:
        return self.P * self.P


@dataclass
class FusedBlock:
    S_views: torch.Tensor  # B x V x N x T
    S: torch.Tensor
    S_prime: torch.Tensor
    U: torch.Tensor
    Y: torch.Tensor
    beta: torch.Tensor


class MultiViewRppg(nn.Module):
    """Shared dual-stream encoders over the views, then MVCA fusion and projection.

    With ``use_mvca=False`` the views are fused by a plain mean, the attention
    path is bypassed (``S' = S``) and the gate is unused.
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.rhythm = RhythmStream(config.P)
        self.visual = VisualStream(config.D) if config.use_mvca else None
        self.aggregate = Aggregator(config.N)
        self.attention = CrossViewAttention(config.D, config.N, config.heads) if config.use_mvca else None
        self.beta = nn.Parameter(torch.tensor(float(config.beta_init)))
        self.project = ProjectionHead(config.N)

    def forward(self, x: torch.Tensor, weights: torch.Tensor | None = None) -> FusedBlock:
        """``x``: B x V x 3 x T x H x W in [-1, 1]; ``weights``: B x V flow-noise weights."""
        if x.dim() != 6:
            raise GraphError(f"model: expected B x V x 3 x T x H x W input, got {tuple(x.shape)}")
        B, V = x.shape[:2]
        flat = x.reshape(B * V, *x.shape[2:])
        S_views = self.rhythm(flat).reshape(B, V, self.config.N, -1)
        if self.config.use_mvca:
            if weights is None:
                weights = torch.full((B, V), 1.0 / V)
            S = self.aggregate(S_views, weights)
            F_views = self.visual(flat).reshape(B, V, self.config.D, -1)
            S_prime = self.attention(F_views)
            U = gated_fusion(S, S_prime, self.beta)
        else:
            S = S_prime = U = S_views.mean(dim=1)
        Y = self.project(U)
        return FusedBlock(S_views, S, S_prime, U, Y, self.beta)
