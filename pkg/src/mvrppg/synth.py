"""Synthetic three-view facial-patch clips with ground-truth pulse.

Each clip shows an elliptical skin patch over a textured, static background,
seen by three cameras at -45, 0 and +45 degrees. The patch moves under a
global affine head motion, its pulsatile amplitude in each view scales with
``max(0, cos(yaw - view_angle))`` and it is swapped for a non-pulsatile tone
when that visibility drops below ``OCCLUSION_THRESHOLD``.

Arrays are time-major: frames are ``T x H x W x 3`` uint8 and keypoints are
``T x K x 2`` (x, y) float32. The on-disk container stores the transposed
layouts declared in :mod:`mvrppg.container`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .sigproc import TimeSeries

SCENARIOS = ("stationary", "speaking", "movement")
VIEWS = ("l", "c", "r")
VIEW_ANGLES = {"l": -45.0, "c": 0.0, "r": 45.0}
CHANNEL_GAINS = np.array([0.5, 1.0, 0.7])  # R, G, B pulsatile gains
OCCLUSION_THRESHOLD = 0.2
HARMONIC_AMPLITUDE = 0.3
N_KEYPOINTS = 16

_SKIN_AXES = (0.26, 0.34)  # ellipse semi-axes as fractions of W, H


@dataclass(frozen=True)
class SceneConfig:
    scenario: str = "stationary"
    hr_base: float = 72.0
    hr_drift: float = 0.0
    fps: float = 30.0
    duration_s: float = 10.0
    resolution: tuple[int, int] = (64, 64)
    ppg_amplitude: float = 0.03
    noise_sigma: float = 0.0
    seed: int = 0
    appearance_seed: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"unknown scenario {self.scenario!r}")
        if not self.fps > 0 or not self.duration_s > 0:
            raise ParameterError("fps and duration_s must be positive")
        if not 0 < self.ppg_amplitude <= 0.2:
            raise ParameterError("ppg_amplitude must lie in (0, 0.2]")
        if not 48 <= self.hr_base <= 180:
            raise ParameterError("hr_base must lie in [48, 180] bpm")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be non-negative")
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**{**d, "resolution": tuple(d["resolution"])})


@dataclass
class Trajectory:
    A: np.ndarray  # T x 2 x 2
    b: np.ndarray  # T x 2, pixels
    yaw: np.ndarray  # T, degrees


@dataclass
class MultiViewClip:
    frames: dict[str, np.ndarray]
    keypoints: dict[str, np.ndarray]
    gt_ppg: TimeSeries
    hr_trace: np.ndarray
    config: SceneConfig
    subject: int = 0
    view_angles: dict[str, float] = field(default_factory=lambda: dict(VIEW_ANGLES))

    @property
    def n_frames(self) -> int:
        return self.gt_ppg.samples.shape[0]

    @property
    def fps(self) -> float:
        return self.gt_ppg.fs

    @property
    def clip_id(self) -> str:
        return f"s{self.subject:03d}_{self.config.scenario}"


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *key]))


def hr_trace_for(config: SceneConfig) -> np.ndarray:
    t = np.arange(config.n_frames) / config.fps
    return config.hr_base + config.hr_drift * t / 60.0


def gen_ppg_waveform(hr_trace, fps: float, seed: int = 0) -> TimeSeries:
    """Fundamental plus 0.3-amplitude second harmonic, phase-integrated from ``hr_trace``."""
    hr = np.asarray(hr_trace, dtype=np.float64)
    if np.any(hr < 42) or np.any(hr > 240):
        raise ParameterError("hr_trace must lie within [42, 240] bpm")
    phi0 = _rng(seed, 1).uniform(0, 2 * np.pi)
    inst_freq = hr / 60.0
    phase = phi0 + 2 * np.pi * np.concatenate([[0.0], np.cumsum(inst_freq[:-1])]) / fps
    wave = np.sin(phase) + HARMONIC_AMPLITUDE * np.sin(2 * phase + np.pi / 3)
    wave /= np.abs(wave).max()
    return TimeSeries(wave.astype(np.float32), float(fps))


def _sines(rng, t, n, amp_range, freq_range):
    out = np.zeros_like(t)
    for _ in range(n):
        a = rng.uniform(*amp_range)
        f = rng.uniform(*freq_range)
        out += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return out


def _rotation(deg):
    th = np.deg2rad(deg)
    c, s = np.cos(th), np.sin(th)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def gen_head_trajectory(
    scenario: str, T: int, seed: int = 0, fps: float = 30.0, scale: float = 1.0
) -> Trajectory:
    """Per-frame global affine ``(A_t, b_t)`` and yaw for one scenario.

    All components are sums of sinusoids below 0.45 Hz. ``scale`` multiplies
    the translation amplitudes (1.0 means up to 8 px of sway).
    """
    if T < 2:
        raise ParameterError("trajectory needs T >= 2")
    if scenario not in SCENARIOS:
        raise ParameterError(f"unknown scenario {scenario!r}")
    t = np.arange(T) / fps
    rng = _rng(seed, 2)
    if scenario == "stationary":
        return Trajectory(np.tile(np.eye(2), (T, 1, 1)), np.zeros((T, 2)), np.zeros(T))
    if scenario == "speaking":
        bx = _sines(rng, t, 2, (0.2, 0.35), (0.2, 0.45))
        by = _sines(rng, t, 2, (0.2, 0.35), (0.2, 0.45))
        yaw = _sines(rng, t, 2, (1.0, 2.4), (0.15, 0.4))
        return Trajectory(np.tile(np.eye(2), (T, 1, 1)), np.stack([bx, by], -1), yaw)
    yaw = _sines(rng, t, 1, (32.0, 44.0), (0.1, 0.2))
    bx = _sines(rng, t, 1, (7.0 * scale, 8.0 * scale), (0.33, 0.4))
    by = _sines(rng, t, 1, (2.0 * scale, 3.0 * scale), (0.2, 0.35))
    roll = _sines(rng, t, 1, (3.0, 5.0), (0.1, 0.3))
    return Trajectory(_rotation(roll), np.stack([bx, by], -1), yaw)


def visibility(yaw_deg, view: str) -> np.ndarray:
    return np.maximum(0.0, np.cos(np.deg2rad(np.asarray(yaw_deg) - VIEW_ANGLES[view])))


def _geometry(config: SceneConfig):
    H, W = config.resolution
    centre = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    axes = np.array([_SKIN_AXES[0] * W, _SKIN_AXES[1] * H])
    return centre, axes


def reference_keypoints(config: SceneConfig) -> np.ndarray:
    """4x4 grid spanning the inner half of the skin ellipse, shape ``K x 2``."""
    centre, axes = _geometry(config)
    g = np.array([-0.5, -1 / 6, 1 / 6, 0.5])
    gx, gy = np.meshgrid(g * axes[0], g * axes[1])
    return np.stack([gx.ravel(), gy.ravel()], -1) + centre


def skin_mask(config: SceneConfig, erode_px: float = 1.5) -> np.ndarray:
    """Rest-pose skin region, shrunk by ``erode_px`` to avoid the soft edge."""
    H, W = config.resolution
    centre, axes = _geometry(config)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    rho = np.sqrt(((xx - centre[0]) / axes[0]) ** 2 + ((yy - centre[1]) / axes[1]) ** 2)
    return (rho - 1.0) * axes.min() < -erode_px


def _trajectory_scale(config: SceneConfig) -> float:
    return min(1.0, min(config.resolution) / 64.0)


def trajectory_for(config: SceneConfig) -> Trajectory:
    return gen_head_trajectory(
        config.scenario, config.n_frames, config.seed, config.fps, _trajectory_scale(config)
    )


def render_clip(config: SceneConfig, subject: int = 0) -> MultiViewClip:
    H, W = config.resolution
    if H < 32 or W < 32:
        raise ParameterError("resolution must be at least 32x32")
    hr = hr_trace_for(config)
    ppg = gen_ppg_waveform(hr, config.fps, config.seed)
    traj = trajectory_for(config)

    app_seed = config.seed if config.appearance_seed is None else config.appearance_seed
    arng = _rng(app_seed, 3)
    skin_rgb = np.array([0.78, 0.58, 0.48]) + arng.uniform(-0.04, 0.04, 3)
    occluder_rgb = np.array([0.26, 0.21, 0.18]) + arng.uniform(-0.03, 0.03, 3)
    shade = (arng.uniform(0.6, 1.0), arng.uniform(0, 2 * np.pi), arng.uniform(0.5, 0.9), arng.uniform(0, 2 * np.pi))

    centre, axes = _geometry(config)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    z = np.stack([xx, yy], -1)  # H x W x 2

    # reference-frame coordinates of each pixel: u = A^-1 (z - c - b) + c
    Ainv = np.linalg.inv(traj.A)  # T x 2 x 2
    rel = z[None] - centre - traj.b[:, None, None, :]  # T x H x W x 2
    u = np.einsum("tij,thwj->thwi", Ainv, rel)  # centred reference coords
    rho = np.sqrt((u[..., 0] / axes[0]) ** 2 + (u[..., 1] / axes[1]) ** 2)
    alpha = np.clip(0.5 - (rho - 1.0) * axes.min(), 0.0, 1.0)[..., None]
    shading = (
        1.0
        + 0.10 * np.sin(2 * np.pi * u[..., 0] / (shade[0] * axes[0] * 2) + shade[1])
        + 0.06 * np.cos(2 * np.pi * u[..., 1] / (shade[2] * axes[1] * 2) + shade[3])
    )[..., None]
    del rel, u, rho

    kp0 = reference_keypoints(config) - centre
    kps = np.einsum("tij,kj->tki", traj.A, kp0) + centre + traj.b[:, None, :]
    if np.any(kps < 0) or np.any(kps[..., 0] > W - 1) or np.any(kps[..., 1] > H - 1):
        raise ParameterError("trajectory drives keypoints out of frame; lower the motion scale")
    kps = kps.astype(np.float32)

    pulse = ppg.samples.astype(np.float64)
    frames, keypoints = {}, {}
    for vi, view in enumerate(VIEWS):
        vrng = _rng(app_seed, 4, vi)
        bg_rgb = np.array([0.36, 0.44, 0.52]) + vrng.uniform(-0.05, 0.05, 3)
        kx, ky = vrng.uniform(1.5, 3.5, 2) * 2 * np.pi / W
        bg = bg_rgb * (0.85 + 0.15 * np.sin(kx * xx + vrng.uniform(0, 6.3)) * np.cos(ky * yy + vrng.uniform(0, 6.3)))[..., None]

        vis = visibility(traj.yaw, view)
        occluded = vis < OCCLUSION_THRESHOLD
        mod = 1.0 + config.ppg_amplitude * (vis * pulse)[:, None] * CHANNEL_GAINS  # T x 3
        face_rgb = np.where(occluded[:, None], occluder_rgb, skin_rgb * mod)  # T x 3
        img = alpha * (face_rgb[:, None, None, :] * shading) + (1.0 - alpha) * bg[None]
        if config.noise_sigma > 0:
            nrng = _rng(config.seed, 5, vi)
            img = img + nrng.normal(0.0, config.noise_sigma, img.shape)
        frames[view] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        keypoints[view] = kps.copy()

    return MultiViewClip(
        frames=frames,
        keypoints=keypoints,
        gt_ppg=ppg,
        hr_trace=hr.astype(np.float32),
        config=config,
        subject=subject,
    )


@dataclass(frozen=True)
class BenchmarkSpec:
    n_subjects: int = 8
    scenarios: tuple[str, ...] = SCENARIOS
    duration_s: float = 20.0
    resolution: tuple[int, int] = (64, 64)
    noise_sigma: float = 2.0 / 255
    ppg_amplitude: float = 0.03
    hr_range: tuple[float, float] = (55.0, 115.0)
    max_drift: float = 4.0
    seed: int = 0


def benchmark_configs(spec: BenchmarkSpec) -> list[tuple[int, SceneConfig]]:
    """Deterministic (subject, config) list; appearance and HR are per subject."""
    out = []
    for subject in range(spec.n_subjects):
        srng = _rng(spec.seed, 10, subject)
        hr_base = float(srng.uniform(*spec.hr_range))
        app_seed = int(srng.integers(2**63))
        for si, scenario in enumerate(SCENARIOS):
            drift = float(srng.uniform(-spec.max_drift, spec.max_drift))
            clip_seed = int(srng.integers(2**63))
            if scenario not in spec.scenarios:
                continue
            out.append(
                (
                    subject,
                    SceneConfig(
                        scenario=scenario,
                        hr_base=hr_base,
                        hr_drift=drift,
                        duration_s=spec.duration_s,
                        resolution=spec.resolution,
                        ppg_amplitude=spec.ppg_amplitude,
                        noise_sigma=spec.noise_sigma,
                        seed=clip_seed,
                        appearance_seed=app_seed,
                    ),
                )
            )
    return out


def generate_benchmark(spec: BenchmarkSpec) -> list[MultiViewClip]:
    return [render_clip(cfg, subject) for subject, cfg in benchmark_configs(spec)]


def with_overrides(config: SceneConfig, **kw) -> SceneConfig:
    return replace(config, **kw)
