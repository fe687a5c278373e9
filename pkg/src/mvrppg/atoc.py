"""Adaptive temporal optical compensation.

Per adjacent frame pair: a frame-difference motion mask with an Otsu
threshold, morphological clean-up, a per-keypoint affine motion field fitted
to landmark displacements, selection of pixels whose displacement exceeds
``tau``, and backward warping of those pixels from the previous frame.
The mean displacement over the mask is the view's flow-noise score.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ParameterError

DEFAULT_TAU = 0.5
DEFAULT_NEIGHBOURS = 6
DEFAULT_MAX_DEFORM = 0.5
_STRUCT = np.ones((3, 3), dtype=bool)


class Threshold(NamedTuple):
    value: float
    degenerate: bool


@dataclass
class AffineField:
    """Local affine motion around each anchor: ``z -> A_k (z - p_k) + p_k + b_k``."""

    anchors: np.ndarray  # K x 2
    A: np.ndarray  # K x 2 x 2
    b: np.ndarray  # K x 2

    @classmethod
    def identity(cls, anchors) -> "AffineField":
        anchors = np.asarray(anchors, dtype=np.float64)
        K = anchors.shape[0]
        return cls(anchors, np.tile(np.eye(2), (K, 1, 1)), np.zeros((K, 2)))

    def nearest(self, points: np.ndarray) -> np.ndarray:
        best = np.full(points.shape[0], np.inf)
        idx = np.zeros(points.shape[0], dtype=np.int64)
        for k, p in enumerate(self.anchors):
            d2 = (points[:, 0] - p[0]) ** 2 + (points[:, 1] - p[1]) ** 2
            closer = d2 < best
            best[closer] = d2[closer]
            idx[closer] = k
        return idx

    def displacement(self, points) -> np.ndarray:
        """Displacement ``(A_k - I)(z - p_k) + b_k`` using each point's nearest anchor."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        k = self.nearest(pts)
        rel = pts - self.anchors[k]
        lin = np.einsum("nij,nj->ni", self.A[k] - np.eye(2), rel)
        return lin + self.b[k]

    def displacement_map(self, shape) -> np.ndarray:
        H, W = shape
        yy, xx = np.mgrid[0:H, 0:W]
        pts = np.stack([xx.ravel(), yy.ravel()], -1).astype(np.float64)
        return self.displacement(pts).reshape(H, W, 2)


def _as_float(frame) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    return f if f.ndim == 3 else f[..., None]


def frame_difference(prev, cur) -> np.ndarray:
    """Max-over-channels absolute difference."""
    a, b = _as_float(prev), _as_float(cur)
    if a.shape != b.shape:
        raise ParameterError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return np.abs(b - a).max(axis=-1)


def motion_mask(prev, cur, delta: float) -> np.ndarray:
    if delta < 0:
        raise ParameterError("delta must be non-negative")
    return frame_difference(prev, cur) > delta


def auto_threshold(diff) -> Threshold:
    """Otsu threshold over a 256-bin histogram of ``diff`` (values in [0, 255]).

    Pixels with ``diff > value`` form the foreground. When several thresholds
    maximise the between-class variance (empty histogram gaps), the centre of
    the maximising run is returned.
    """
    d = np.asarray(diff, dtype=np.float64).ravel()
    if d.size == 0:
        raise ParameterError("empty difference image")
    bins = np.clip(np.floor(d), 0, 255).astype(np.int64)
    hist = np.bincount(bins, minlength=256).astype(np.float64)
    p = hist / hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(p)[:-1]
    mu = np.cumsum(p * levels)[:-1]
    mu_t = float((p * levels).sum())
    denom = w0 * (1.0 - w0)
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where(denom > 0, (mu_t * w0 - mu) ** 2 / denom, 0.0)
    best = between.max()
    if not best > 0:
        return Threshold(0.0, True)
    first = int(np.argmax(between >= best * (1 - 1e-12)))
    last = first
    while last + 1 < between.size and between[last + 1] >= best * (1 - 1e-12):
        last += 1
    return Threshold((first + last) / 2.0, False)


def refine_mask(mask) -> np.ndarray:
    """3x3 closing followed by one 3x3 dilation."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(m, _STRUCT), _STRUCT, border_value=1)
    return ndimage.binary_dilation(closed, _STRUCT)[1:-1, 1:-1]


def estimate_affine(
    kp_prev,
    kp_cur,
    neighbours: int = DEFAULT_NEIGHBOURS,
    max_deform: float = DEFAULT_MAX_DEFORM,
) -> AffineField:
    """Least-squares affine per keypoint over its ``neighbours`` nearest keypoints.

    Degenerate (collinear) neighbourhoods and fits deforming more than
    ``max_deform`` (spectral norm of ``A - I``) fall back to pure translation.
    """
    P = np.asarray(kp_prev, dtype=np.float64)
    Q = np.asarray(kp_cur, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 2:
        raise ParameterError("keypoint arrays must both be K x 2")
    K = P.shape[0]
    if K < 3:
        raise ParameterError("need at least 3 keypoints")
    m = min(neighbours, K)
    d2 = ((P[:, None] - P[None]) ** 2).sum(-1)
    order = np.argsort(d2, axis=1, kind="stable")[:, :m]
    x = P[order] - P[:, None, :]  # K x m x 2
    y = Q[order] - P[:, None, :]
    sv = np.linalg.svd(x - x.mean(1, keepdims=True), compute_uv=False)  # K x 2
    ok = (sv[:, 0] > 0) & (sv[:, -1] > 1e-6 * sv[:, 0])
    A = np.tile(np.eye(2), (K, 1, 1))
    b = Q - P
    if ok.any():
        design = np.concatenate([x[ok], np.ones((int(ok.sum()), m, 1))], axis=2)
        sol = np.linalg.pinv(design) @ y[ok]  # n x 3 x 2
        Ak = np.swapaxes(sol[:, :2, :], 1, 2)
        deform = np.linalg.norm(Ak - np.eye(2), ord=2, axis=(1, 2))
        good = np.all(np.isfinite(sol), axis=(1, 2)) & (deform <= max_deform)
        rows = np.flatnonzero(ok)[good]
        A[rows] = Ak[good]
        b[rows] = sol[good, 2, :]
    return AffineField(P.copy(), A, b)


def select_regions(mask, field: AffineField, tau: float = DEFAULT_TAU, disp_map=None) -> np.ndarray:
    if tau < 0:
        raise ParameterError("tau must be non-negative")
    mask = np.asarray(mask, dtype=bool)
    if disp_map is None:
        disp_map = field.displacement_map(mask.shape)
    return mask & (np.linalg.norm(disp_map, axis=-1) > tau)


def warp_compensate(prev, cur, region, field: AffineField, disp_map=None) -> np.ndarray:
    """Replace pixels in ``region`` with ``prev`` sampled at ``z - T(z)`` (bilinear, border clamp)."""
    cur = np.asarray(cur)
    region = np.asarray(region, dtype=bool)
    if not region.any():
        return cur.copy()
    H, W = region.shape
    if disp_map is None:
        disp_map = field.displacement_map((H, W))
    ys, xs = np.nonzero(region)
    src_x = xs - disp_map[ys, xs, 0]
    src_y = ys - disp_map[ys, xs, 1]
    prev_f = _as_float(prev)
    out = _as_float(cur).copy()
    for c in range(prev_f.shape[-1]):
        out[ys, xs, c] = ndimage.map_coordinates(prev_f[..., c], [src_y, src_x], order=1, mode="nearest")
    if cur.ndim == 2:
        out = out[..., 0]
    if np.issubdtype(cur.dtype, np.integer):
        info = np.iinfo(cur.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(cur.dtype)


def flow_noise_score(mask, field: AffineField, disp_map=None) -> float:
    """Mean displacement magnitude over the mask; 0 for an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    if disp_map is None:
        disp_map = field.displacement_map(mask.shape)
    return float(np.linalg.norm(disp_map[mask], axis=-1).mean())


@dataclass
class PairResult:
    mask: np.ndarray
    region: np.ndarray
    score: float
    frame: np.ndarray


def process_pair(prev, cur, kp_prev, kp_cur, tau: float = DEFAULT_TAU, warp: bool = True) -> PairResult:
    """One pass of the mask -> field -> region -> warp chain for frame ``cur``."""
    diff = frame_difference(prev, cur)
    delta = auto_threshold(diff).value
    mask = refine_mask(diff > delta)
    region = np.zeros_like(mask)
    if not mask.any():
        return PairResult(mask, region, 0.0, np.asarray(cur))
    field = estimate_affine(kp_prev, kp_cur)
    ys, xs = np.nonzero(mask)
    disp = np.zeros(mask.shape + (2,))
    disp[ys, xs] = field.displacement(np.stack([xs, ys], -1).astype(np.float64))
    mag = np.linalg.norm(disp[ys, xs], axis=-1)
    score = float(mag.mean())
    region[ys, xs] = mag > tau
    frame = warp_compensate(prev, cur, region, field, disp) if warp else np.asarray(cur)
    return PairResult(mask, region, score, frame)


@dataclass
class ViewCompensation:
    frames: np.ndarray
    score: float  # clip-level flow-noise score (mean over frame pairs)
    pair_scores: np.ndarray
    region_pixels: np.ndarray


def process_view(
    frames,
    keypoints,
    scenario: str,
    tau: float = DEFAULT_TAU,
    compensate: bool = True,
    dump_dir=None,
) -> ViewCompensation:
    """Flow-noise score for a view, warping frames 2..T only for movement clips."""
    frames = np.asarray(frames)
    keypoints = np.asarray(keypoints)
    if keypoints.shape[0] != frames.shape[0]:
        raise ParameterError("keypoints and frames disagree on T")
    T = frames.shape[0]
    warp = compensate and scenario == "movement"
    out = frames.copy() if warp else frames
    scores = np.zeros(max(T - 1, 0))
    regions = np.zeros(max(T - 1, 0), dtype=np.int64)
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    for t in range(1, T):
        res = process_pair(frames[t - 1], frames[t], keypoints[t - 1], keypoints[t], tau, warp)
        scores[t - 1] = res.score
        regions[t - 1] = int(res.region.sum()) if warp else 0
        if warp:
            out[t] = res.frame
        if dump_dir is not None:
            from .container import write_pgm

            write_pgm(Path(dump_dir) / f"mask_{t:05d}.pgm", res.mask)
    score = float(scores.mean()) if scores.size else 0.0
    return ViewCompensation(out, score, scores, regions)


def compensate_sequence(frames, keypoints, scenario: str, tau: float = DEFAULT_TAU) -> np.ndarray:
    return process_view(frames, keypoints, scenario, tau).frames
