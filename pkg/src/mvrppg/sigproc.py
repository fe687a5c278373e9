"""1-D signal utilities: resampling, filtering, spectra, HR readout, metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import (
    DegenerateSignalError,
    InvalidSignalError,
    NoPulseError,
    ParameterError,
)

HR_BAND = (0.7, 4.0)
DEFAULT_NFFT = 2048


@dataclass
class TimeSeries:
    samples: np.ndarray
    fs: float
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise InvalidSignalError("TimeSeries samples must be 1-D")
        if not self.fs > 0:
            raise ParameterError(f"fs must be positive, got {self.fs}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fs


@dataclass
class Spectrum:
    freqs: np.ndarray
    power: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    r: float
    n: int
    r_degenerate: bool = False


def _check_finite(x: np.ndarray, min_len: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < min_len:
        raise InvalidSignalError(f"need at least {min_len} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidSignalError("signal contains non-finite samples")
    return x


def resample(ts: TimeSeries, target_fs: float) -> TimeSeries:
    """Linearly interpolate ``ts`` onto a uniform grid at ``target_fs``.

    The output grid starts at the first input sample and never extends past
    the last one, so a 600-sample 60 Hz series maps to 300 samples at 30 Hz.
    """
    if not target_fs > 0:
        raise ParameterError("target_fs must be positive")
    x = _check_finite(ts.samples)
    t_in = np.arange(x.shape[0]) / ts.fs
    n_out = int(np.floor(t_in[-1] * target_fs + 1e-9)) + 1
    t_out = np.arange(n_out) / target_fs
    return TimeSeries(np.interp(t_out, t_in, x), float(target_fs))


def standardize(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Zero-mean, unit (population) std. Constant input gives zeros and ``True``."""
    x = np.asarray(x, dtype=np.float64)
    centred = x - x.mean()
    sd = centred.std()
    if sd <= 1e-12 * max(1.0, np.abs(x).max(initial=0.0)):
        return np.zeros_like(centred), True
    return centred / sd, False


def detrend_normalize(ts: TimeSeries) -> TimeSeries:
    x = _check_finite(ts.samples)
    y, degenerate = standardize(x)
    return TimeSeries(y, ts.fs, degenerate=degenerate)


def _bandpass_sos(fs: float, lo: float, hi: float, order: int = 2):
    if not (0 < lo < hi):
        raise ParameterError(f"invalid band ({lo}, {hi})")
    if hi >= fs / 2:
        raise ParameterError(f"upper edge {hi} Hz is not below Nyquist ({fs / 2} Hz)")
    # order-2 prototype -> 4th-order band-pass
    return sps.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")


def bandpass(ts: TimeSeries, lo: float = HR_BAND[0], hi: float = HR_BAND[1]) -> TimeSeries:
    """Zero-phase 4th-order Butterworth band-pass."""
    sos = _bandpass_sos(ts.fs, lo, hi)
    x = _check_finite(ts.samples)
    return TimeSeries(bandpass_array(x, ts.fs, lo, hi, sos=sos), ts.fs)


def bandpass_array(x, fs, lo=HR_BAND[0], hi=HR_BAND[1], axis=-1, sos=None):
    if sos is None:
        sos = _bandpass_sos(fs, lo, hi)
    x = np.asarray(x, dtype=np.float64)
    padlen = min(3 * (2 * len(sos) + 1) * 4, x.shape[axis] - 1)
    return sps.sosfiltfilt(sos, x, axis=axis, padlen=padlen)


def psd(ts: TimeSeries, nfft: int = DEFAULT_NFFT) -> Spectrum:
    """One-sided zero-padded periodogram (density scaling, no detrending).

    ``sum(power) * bin_width`` equals the mean square of the samples.
    """
    x = _check_finite(ts.samples, min_len=32)
    n = x.shape[0]
    if nfft < n:
        raise ParameterError(f"nfft={nfft} shorter than series length {n}")
    spec = np.fft.rfft(x, n=nfft)
    power = np.abs(spec) ** 2 / (ts.fs * n)
    if nfft % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    freqs = np.fft.rfftfreq(nfft, d=1.0 / ts.fs)
    return Spectrum(freqs, power)


def hr_from_spectrum(spec: Spectrum, band: tuple[float, float] = HR_BAND) -> float:
    """Heart rate in bpm at the in-band spectral peak (lowest frequency wins ties)."""
    lo, hi = band
    freqs = np.asarray(spec.freqs)
    if freqs[0] > lo or freqs[-1] < hi:
        raise ParameterError("spectrum does not cover the heart-rate band")
    sel = (freqs >= lo) & (freqs <= hi)
    p = np.asarray(spec.power)[sel]
    if p.size == 0 or not np.any(p > 0):
        raise NoPulseError("no power in the heart-rate band")
    return 60.0 * float(freqs[sel][int(np.argmax(p))])


def estimate_hr(x, fs: float, nfft: int = DEFAULT_NFFT, filtered: bool = True) -> float:
    """Band-pass, periodogram and peak pick in one call."""
    ts = TimeSeries(np.asarray(x, dtype=np.float64), fs)
    if filtered:
        ts = bandpass(ts)
    return hr_from_spectrum(psd(ts, nfft=max(nfft, len(ts))))


def pearson_r(a, b) -> float:
    a = _check_finite(a)
    b = _check_finite(b)
    if a.shape != b.shape:
        raise ParameterError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va <= 0.0 or vb <= 0.0:
        raise DegenerateSignalError("zero-variance argument to pearson_r")
    r = float(np.dot(da, db)) / np.sqrt(va * vb)
    return float(np.clip(r, -1.0, 1.0))


def metrics(pred, gt) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ParameterError(f"pred/gt shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ParameterError("empty prediction list")
    err = pred - gt
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    try:
        r, degenerate = pearson_r(pred, gt), False
    except (DegenerateSignalError, InvalidSignalError):
        r, degenerate = 0.0, True
    return MetricsReport(mae=mae, rmse=rmse, r=r, n=int(pred.size), r_degenerate=degenerate)
