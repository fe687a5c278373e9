"""Classical unsupervised rPPG baselines (POS, CHROM) over skin-averaged RGB traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, ParameterError
from .sigproc import HR_BAND, TimeSeries, bandpass_array, standardize

POS_WINDOW_S = 1.6
_POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])


@dataclass
class RgbTrace:
    rgb: np.ndarray  # T x 3
    fs: float

    def __len__(self) -> int:
        return self.rgb.shape[0]


def extract_rgb_trace(frames, skin_mask, fs: float = 30.0) -> RgbTrace:
    """Per-frame mean R, G, B over ``skin_mask`` for ``T x H x W x 3`` frames."""
    mask = np.asarray(skin_mask, dtype=bool)
    if not mask.any():
        raise ParameterError("skin mask is empty")
    frames = np.asarray(frames)
    if frames.shape[1:3] != mask.shape:
        raise ParameterError(f"mask {mask.shape} does not match frames {frames.shape[1:3]}")
    return RgbTrace(frames[:, mask, :].astype(np.float64).mean(axis=1), float(fs))


def _check(trace: RgbTrace) -> np.ndarray:
    rgb = np.asarray(trace.rgb, dtype=np.float64)
    if rgb.ndim != 2 or rgb.shape[1] != 3:
        raise ParameterError("trace must be T x 3")
    if not np.all(np.isfinite(rgb)):
        raise ParameterError("trace contains non-finite values")
    if np.all(np.ptp(rgb, axis=0) == 0):
        raise DegenerateSignalError("constant RGB trace")
    return rgb


def _finish(h: np.ndarray, fs: float) -> TimeSeries:
    y, degenerate = standardize(h)
    if degenerate:
        raise DegenerateSignalError("baseline output is constant")
    return TimeSeries(y, fs)


def pos(trace: RgbTrace, window_s: float = POS_WINDOW_S) -> TimeSeries:
    """Plane-orthogonal-to-skin projection with overlap-added sliding windows."""
    rgb = _check(trace)
    T = rgb.shape[0]
    w = int(np.ceil(window_s * trace.fs))
    if w >= T:
        raise ParameterError(f"window of {w} frames is not shorter than the trace ({T})")
    h = np.zeros(T)
    for start in range(T - w + 1):
        block = rgb[start : start + w]
        mean = block.mean(axis=0)
        if np.any(mean == 0):
            continue
        c = block / mean
        s = c @ _POS_PROJECTION.T  # w x 2
        sd = s.std(axis=0)
        seg = s[:, 0] + (sd[0] / sd[1] if sd[1] > 0 else 0.0) * s[:, 1]
        h[start : start + w] += seg - seg.mean()
    return _finish(h, trace.fs)


def chrom(trace: RgbTrace, band=HR_BAND) -> TimeSeries:
    """Chrominance projection on band-passed, mean-normalised channels."""
    rgb = _check(trace)
    mean = rgb.mean(axis=0)
    if np.any(mean == 0):
        raise DegenerateSignalError("a colour channel has zero mean")
    norm = bandpass_array(rgb / mean, trace.fs, *band, axis=0)
    r, g, b = norm.T
    x = 3 * r - 2 * g
    y = 1.5 * r + g - 1.5 * b
    sy = y.std()
    return _finish(x - (x.std() / sy if sy > 0 else 0.0) * y, trace.fs)
