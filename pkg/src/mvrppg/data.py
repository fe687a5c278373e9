"""Turn rendered multi-view clips into fixed-length network windows.

Each view is motion-compensated (movement clips) and scored at render
resolution, then area-downsampled to the network resolution. View masking
happens at batch time so one prepared set serves every view-availability arm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .atoc import DEFAULT_TAU, process_view
from .dualstream import frames_to_input
from .errors import ConfigError
from .mvca import flow_noise_weights
from .synth import VIEWS, MultiViewClip

WINDOW = 300
NET_RES = 32


@dataclass
class Window:
    clip_id: str
    subject: int
    scenario: str
    start: int
    frames: np.ndarray  # V x T x h x w x 3 uint8
    scores: np.ndarray  # V flow-noise scores
    ppg: np.ndarray  # T float32
    fs: float

    @property
    def length(self) -> int:
        return self.frames.shape[1]


def area_downsample(frames: np.ndarray, res: int) -> np.ndarray:
    """Block-mean ``T x H x W x C`` uint8 frames to ``res x res``."""
    T, H, W, C = frames.shape
    if H % res or W % res:
        raise ConfigError(f"frame size {H}x{W} is not a multiple of {res}")
    fy, fx = H // res, W // res
    if fy == fx == 1:
        return frames
    blocks = frames.reshape(T, res, fy, res, fx, C).astype(np.float32).mean(axis=(2, 4))
    return np.clip(np.rint(blocks), 0, 255).astype(np.uint8)


def prepare_clip(
    clip: MultiViewClip,
    use_atoc: bool = True,
    window: int = WINDOW,
    net_res: int = NET_RES,
    tau: float = DEFAULT_TAU,
) -> list[Window]:
    T = clip.n_frames
    if window > T:
        raise ConfigError(f"window of {window} frames exceeds clip length {T}")
    views, pair_scores = [], []
    for v in VIEWS:
        comp = process_view(clip.frames[v], clip.keypoints[v], clip.config.scenario, tau, compensate=use_atoc)
        views.append(area_downsample(comp.frames, net_res))
        pair_scores.append(comp.pair_scores)
    frames = np.stack(views)
    pairs = np.stack(pair_scores)  # V x (T-1)
    out = []
    for start in range(0, T - window + 1, window):
        seg_pairs = pairs[:, start : start + window - 1]
        out.append(
            Window(
                clip_id=clip.clip_id,
                subject=clip.subject,
                scenario=clip.config.scenario,
                start=start,
                frames=frames[:, start : start + window],
                scores=seg_pairs.mean(axis=1),
                ppg=np.asarray(clip.gt_ppg.samples[start : start + window], dtype=np.float32),
                fs=clip.fps,
            )
        )
    return out


def prepare_clips(clips, use_atoc: bool = True, window: int = WINDOW, net_res: int = NET_RES) -> list[Window]:
    out: list[Window] = []
    for clip in sorted(clips, key=lambda c: c.clip_id):
        out.extend(prepare_clip(clip, use_atoc, window, net_res))
    return out


def parse_views(spec) -> tuple[bool, bool, bool]:
    """``"lcr"``, ``"c"``, ``(True, False, True)`` ... -> availability mask over (l, c, r)."""
    if isinstance(spec, str):
        s = spec.strip().lower()
        if not s or any(ch not in VIEWS for ch in s):
            raise ConfigError(f"views must be a combination of 'l', 'c', 'r', got {spec!r}")
        mask = tuple(v in s for v in VIEWS)
    else:
        mask = tuple(bool(x) for x in spec)
        if len(mask) != 3:
            raise ConfigError("view mask needs three entries")
    if not any(mask):
        raise ConfigError("at least one view must be available")
    return mask


def views_label(mask) -> str:
    return "".join(v for v, m in zip(VIEWS, mask) if m)


def make_batch(windows: list[Window], views=(True, True, True)):
    """Network input ``B x V x 3 x T x h x w`` with masked views zeroed, weights ``B x V``, ppg ``B x T``."""
    mask = np.asarray(parse_views(views))
    x = frames_to_input(np.stack([w.frames for w in windows]))
    x[:, ~torch.from_numpy(mask)] = 0.0
    scores = np.stack([w.scores for w in windows])
    weights = flow_noise_weights(scores, available=mask)
    ppg = torch.from_numpy(np.stack([w.ppg for w in windows]))
    return x, torch.from_numpy(weights.astype(np.float32)), ppg
