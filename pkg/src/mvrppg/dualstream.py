"""Rhythm-structural and visual-perceptual 3-D CNN streams (toy widths).

Both streams share the encoder-decoder topology but not parameters:
an initial spatial block, two stride-2 temporal downsamples, a residual
mid block, and two temporal transposed-conv upsamples that restore T.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffcore import expect_shape, xavier_init_
from .errors import GraphError

NORM_EPS = 1e-5


def _norm(c: int) -> nn.GroupNorm:
    # one group = layer norm over (C, T, H, W) of each sample; no cross-sample statistics
    return nn.GroupNorm(1, c, eps=NORM_EPS)


def frames_to_input(frames) -> torch.Tensor:
    """uint8 ``... x T x H x W x 3`` frames to float ``... x 3 x T x H x W`` in [-1, 1]."""
    x = torch.as_tensor(np.asarray(frames))
    x = x.to(torch.float32).movedim(-1, -4)
    return x / 127.5 - 1.0


class _Residual3d(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.conv1 = nn.Conv3d(c, c, 3, padding=1)
        self.norm1 = _norm(c)
        self.conv2 = nn.Conv3d(c, c, 3, padding=1)
        self.norm2 = _norm(c)

    def forward(self, x):
        h = F.elu(self.norm1(self.conv1(x)))
        return F.elu(x + self.norm2(self.conv2(h)))


class Backbone(nn.Module):
    """3 -> 16 -> 32 -> 16 channels; output ``B x 16 x T x H/8 x W/8``."""

    def __init__(self, c1: int = 16, c2: int = 32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv3d(3, c1, (1, 5, 5), stride=(1, 2, 2), padding=(0, 2, 2)), _norm(c1), nn.ELU()
        )
        self.down = nn.Sequential(
            nn.Conv3d(c1, c2, 3, stride=2, padding=1), _norm(c2), nn.ELU(),
            nn.Conv3d(c2, c2, 3, stride=2, padding=1), _norm(c2), nn.ELU(),
        )
        self.mid = _Residual3d(c2)
        self.up = nn.Sequential(
            nn.ConvTranspose3d(c2, c2, (4, 1, 1), stride=(2, 1, 1), padding=(1, 0, 0)), _norm(c2), nn.ELU(),
            nn.ConvTranspose3d(c2, c1, (4, 1, 1), stride=(2, 1, 1), padding=(1, 0, 0)), _norm(c1), nn.ELU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        T = x.shape[2]
        pad = (-T) % 4
        if pad:
            x = F.pad(x, (0, 0, 0, 0, 0, pad), mode="replicate")
        h = self.up(self.mid(self.down(self.stem(x))))
        return h[:, :, :T]


def _check_clip(x: torch.Tensor, op: str) -> None:
    expect_shape(x, (None, 3, None, None, None), op)
    _, _, T, H, W = x.shape
    if T < 8 or H < 16 or W < 16:
        raise GraphError(f"{op}: need T >= 8 and H, W >= 16, got T={T} H={H} W={W}")


class RhythmStream(nn.Module):
    """Clip ``B x 3 x T x H x W`` -> ST-rPPG block ``B x P^2 x T``."""

    def __init__(self, P: int = 2):
        super().__init__()
        self.P = P
        self.backbone = Backbone()
        self.pool = nn.AdaptiveAvgPool3d((None, P, P))
        self.head = nn.Conv3d(16, 1, (3, 1, 1), padding=(1, 0, 0))
        xavier_init_(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_clip(x, "rhythm_stream")
        h = self.head(self.pool(self.backbone(x)))  # B x 1 x T x P x P
        return h[:, 0].permute(0, 2, 3, 1).reshape(x.shape[0], self.P * self.P, x.shape[2])


class VisualStream(nn.Module):
    """Clip ``B x 3 x T x H x W`` -> appearance features ``B x D x T``."""

    def __init__(self, D: int = 16):
        super().__init__()
        self.D = D
        self.backbone = Backbone()
        self.head = nn.Conv1d(16, D, 1)
        xavier_init_(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_clip(x, "visual_stream")
        return self.head(self.backbone(x).mean(dim=(3, 4)))
