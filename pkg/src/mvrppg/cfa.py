"""Correlation, frequency and adversarial losses over segment triplets."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .diffcore import xavier_init_
from .errors import ParameterError
from .mvca import SegmentTriplets
from .sigproc import HR_BAND

PEARSON_EPS = 1e-8
LAMBDA_PSD = 1.0
LAMBDA_G = 0.1
# variance below this (relative to float precision) counts as a flat segment
_FLAT_VAR = 1e-12


def _pearson_terms(f: torch.Tensor, g: torch.Tensor, eps: float):
    fc = f - f.mean(-1, keepdim=True)
    gc = g - g.mean(-1, keepdim=True)
    cov = (fc * gc).mean(-1)
    vf = (fc * fc).mean(-1)
    vg = (gc * gc).mean(-1)
    flat = (vf <= _FLAT_VAR) | (vg <= _FLAT_VAR)
    # clamp inside sqrt keeps the gradient finite for flat segments, which are masked out
    r = cov / (torch.sqrt((vf * vg).clamp_min(_FLAT_VAR**2)) + eps)
    return torch.where(flat, torch.zeros_like(r), r), flat


def pearson_loss(
    triplets: SegmentTriplets | None = None,
    *,
    f: torch.Tensor | None = None,
    f_prime: torch.Tensor | None = None,
    g: torch.Tensor | None = None,
    eps: float = PEARSON_EPS,
) -> tuple[torch.Tensor, int]:
    """``-(1/2n) sum_i [r(f_i, g_i) + r(f'_i, g_i)]`` and the number of flat terms dropped."""
    if triplets is not None:
        f, f_prime, g = triplets.f, triplets.f_prime, triplets.g
    if f.shape != f_prime.shape or f.shape != g.shape or f.shape[-1] < 2:
        raise ParameterError("pearson_loss: segments must share an n x L shape with L >= 2")
    r1, d1 = _pearson_terms(f, g, eps)
    r2, d2 = _pearson_terms(f_prime, g, eps)
    n = f.shape[0]
    loss = -(r1.sum() + r2.sum()) / (2 * n)
    return loss, int(d1.sum() + d2.sum())


def band_bins(length: int, fs: float, nfft: int | None = None, band=HR_BAND) -> torch.Tensor:
    nfft = nfft or length
    freqs = torch.fft.rfftfreq(nfft, 1.0 / fs, dtype=torch.float64)
    idx = torch.nonzero((freqs >= band[0]) & (freqs <= band[1])).flatten()
    if idx.numel() == 0:
        raise ParameterError(f"no FFT bins inside {band} Hz for length {length}, nfft {nfft}")
    return idx


def segment_spectra(x: torch.Tensor, fs: float, nfft: int | None = None, band=HR_BAND):
    """Standardise, |FFT|^2, keep in-band bins, normalise to unit sum.

    Returns ``(spectra n x B, flat n-bool)``; flat segments map to the uniform distribution.
    """
    L = x.shape[-1]
    if L < 32:
        raise ParameterError(f"spectral segments need length >= 32, got {L}")
    idx = band_bins(L, fs, nfft, band)
    xc = x - x.mean(-1, keepdim=True)
    var = (xc * xc).mean(-1, keepdim=True)
    flat = var[..., 0] <= _FLAT_VAR
    z = xc / torch.sqrt(var.clamp_min(_FLAT_VAR))
    power = torch.fft.rfft(z, n=nfft or L).abs().square()[..., idx]
    total = power.sum(-1, keepdim=True)
    flat = flat | (total[..., 0] <= 0)
    p = power / total.clamp_min(torch.finfo(x.dtype).tiny)
    uniform = torch.full_like(p, 1.0 / p.shape[-1])
    return torch.where(flat[..., None], uniform, p), flat


@dataclass
class SpectralTriplets:
    p: torch.Tensor
    p_prime: torch.Tensor
    s: torch.Tensor
    n_flat: int


def psd_triplets(triplets: SegmentTriplets, fs: float, nfft: int | None = None) -> SpectralTriplets:
    p, a = segment_spectra(triplets.f, fs, nfft)
    pp, b = segment_spectra(triplets.f_prime, fs, nfft)
    s, c = segment_spectra(triplets.g, fs, nfft)
    return SpectralTriplets(p, pp, s, int(a.sum() + b.sum() + c.sum()))


def psd_loss(spec: SpectralTriplets | None = None, *, p=None, p_prime=None, s=None) -> torch.Tensor:
    """``(1/2n) sum_i (||p_i - s_i||^2 + ||p'_i - s_i||^2)``."""
    if spec is not None:
        p, p_prime, s = spec.p, spec.p_prime, spec.s
    if p.shape != s.shape or p_prime.shape != s.shape:
        raise ParameterError("psd_loss: spectra must share a bin grid")
    n = p.shape[0]
    return ((p - s).square().sum() + (p_prime - s).square().sum()) / (2 * n)


class Discriminator(nn.Module):
    """1-D patch discriminator: three stride-2 kernel-4 convs, 1 -> 16 -> 32 -> 1 channels."""

    def __init__(self, width: int = 16, slope: float = 0.2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(1, width, 4, 2, 1), nn.LeakyReLU(slope),
            nn.Conv1d(width, 2 * width, 4, 2, 1), nn.LeakyReLU(slope),
            nn.Conv1d(2 * width, 1, 4, 2, 1),
        )
        xavier_init_(self)

    @staticmethod
    def output_length(L: int) -> int:
        for _ in range(3):
            L = (L + 2 - 4) // 2 + 1
        return L

    def forward(self, seg: torch.Tensor) -> torch.Tensor:
        """``n x L`` segments (standardised inside) -> ``n x patches`` scores."""
        if self.output_length(seg.shape[-1]) < 1:
            raise ParameterError(f"segment length {seg.shape[-1]} too short for the discriminator")
        z = seg - seg.mean(-1, keepdim=True)
        z = z / (z.std(-1, unbiased=False, keepdim=True) + 1e-6)
        return self.net(z[:, None])[:, 0]


def disc_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss on patch scores."""
    return 0.5 * ((d_real - 1).square().mean() + d_fake.square().mean())


def gen_loss(d_fake: torch.Tensor) -> torch.Tensor:
    return (d_fake - 1).square().mean()


@dataclass
class LossBundle:
    l_pearson: torch.Tensor
    l_psd: torch.Tensor
    l_g: torch.Tensor
    l_d: torch.Tensor
    l_total: torch.Tensor
    lambda_psd: float = LAMBDA_PSD
    lambda_g: float = LAMBDA_G
    n_flat: int = 0

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_pearson", "l_psd", "l_g", "l_d", "l_total")}


def total_loss(
    l_pearson,
    l_psd,
    l_g,
    l_d=0.0,
    lambda_psd: float = LAMBDA_PSD,
    lambda_g: float = LAMBDA_G,
    n_flat: int = 0,
    lambda_pearson: float = 1.0,
) -> LossBundle:
    """``l_pearson + lambda_psd * l_psd + lambda_g * l_g``; ``lambda_pearson`` exists for loss ablations."""
    as_t = lambda v: v if torch.is_tensor(v) else torch.tensor(float(v))
    l_pearson, l_psd, l_g, l_d = map(as_t, (l_pearson, l_psd, l_g, l_d))
    total = lambda_psd * l_psd
    if lambda_pearson != 0:
        total = total + lambda_pearson * l_pearson
    if lambda_g != 0:
        total = total + lambda_g * l_g
    return LossBundle(l_pearson, l_psd, l_g, l_d, total, lambda_psd, lambda_g, n_flat)
