"""End-to-end training with alternating discriminator / generator updates."""

from __future__ import annotations

import copy
import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .cfa import LAMBDA_G, LAMBDA_PSD, Discriminator, disc_loss, gen_loss, pearson_loss, psd_loss, psd_triplets, total_loss
from .data import Window, make_batch, parse_views
from .diffcore import make_adam, save_checkpoint, set_determinism
from .errors import ConfigError, NumericError
from .mvca import ModelConfig, MultiViewRppg, predict_rppg, segment_sampling, split_segments
from .sigproc import estimate_hr

LOG_COLUMNS = ("step", "l_pearson", "l_psd", "l_g", "l_d", "l_total", "lr", "seed")


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-4
    batch_size: int = 2
    seed: int = 0
    K: int = 4
    lambda_pearson: float = 1.0
    lambda_psd: float = LAMBDA_PSD
    lambda_g: float = LAMBDA_G
    views: str = "lcr"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.K < 1:
            raise ConfigError("epochs, batch_size and K must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        parse_views(self.views)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: MultiViewRppg
    discriminator: Discriminator
    log: list[dict]
    steps_per_epoch: int

    def epoch_means(self, key: str = "l_total") -> np.ndarray:
        vals = np.array([row[key] for row in self.log])
        return vals.reshape(-1, self.steps_per_epoch).mean(axis=1)

    def smoothed(self, key: str = "l_total", window: int = 5) -> np.ndarray:
        vals = np.array([row[key] for row in self.log])
        w = min(window, len(vals))
        return np.convolve(vals, np.ones(w) / w, mode="valid")


def _format(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _losses(model, disc, x, w, ppg, cfg: TrainConfig, fs: float):
    out = model(x, w)
    trip = segment_sampling(out.S, out.S_prime, ppg, cfg.K)
    l_pearson, n_flat = pearson_loss(trip)
    l_psd = psd_loss(psd_triplets(trip, fs))
    fake = split_segments(out.Y, cfg.K).reshape(-1, trip.length)
    return trip, fake, l_pearson, l_psd, n_flat


def train(windows: list[Window], config: TrainConfig, out_dir=None) -> TrainResult:
    """Alternate one discriminator step and one generator step per batch.

    Writes ``train_log.csv`` (append-only, one row per step) and the final
    ``model.mvp`` / ``discriminator.mvp`` checkpoints into ``out_dir``.
    A non-finite loss saves the last good parameters and raises ``NumericError``.
    """
    if not windows:
        raise ConfigError("training set is empty")
    set_determinism(config.seed)
    model = MultiViewRppg(config.model)
    disc = Discriminator()
    opt_g = make_adam(model.parameters(), config.lr)
    opt_d = make_adam(disc.parameters(), config.lr)
    rng = np.random.default_rng(config.seed)
    fs = windows[0].fs
    views = parse_views(config.views)
    n_batches = -(-len(windows) // config.batch_size)

    out = Path(out_dir) if out_dir is not None else None
    log_file = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.csv", "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)

    log: list[dict] = []
    step = 0
    last_good = copy.deepcopy(model.state_dict())
    try:
        for _ in range(config.epochs):
            order = rng.permutation(len(windows))
            for b in range(n_batches):
                batch = [windows[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
                x, w, ppg = make_batch(batch, views)
                model.train()
                trip, fake, l_pearson, l_psd, n_flat = _losses(model, disc, x, w, ppg, config, fs)

                opt_d.zero_grad()
                l_d = disc_loss(disc(trip.g), disc(fake.detach()))
                l_d.backward()
                opt_d.step()

                l_g = gen_loss(disc(fake))
                bundle = total_loss(
                    l_pearson, l_psd, l_g, l_d.detach(), config.lambda_psd, config.lambda_g, n_flat,
                    lambda_pearson=config.lambda_pearson,
                )
                vals = bundle.as_floats()
                if not all(np.isfinite(v) for v in vals.values()):
                    if out is not None:
                        save_checkpoint(last_good, out / "model.mvp")
                    raise NumericError(f"non-finite loss at step {step}: {vals}")
                opt_g.zero_grad()
                bundle.l_total.backward()
                opt_g.step()
                last_good = copy.deepcopy(model.state_dict())

                row = {"step": step, **vals, "lr": float(config.lr), "seed": config.seed}
                log.append(row)
                if writer is not None:
                    writer.writerow([_format(row[c]) for c in LOG_COLUMNS])
                    log_file.flush()
                step += 1
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        save_checkpoint(model, out / "model.mvp")
        save_checkpoint(disc, out / "discriminator.mvp")
    return TrainResult(model, disc, log, n_batches)


@torch.no_grad()
def predict(model: MultiViewRppg, windows: list[Window], views="lcr", batch_size: int = 2) -> np.ndarray:
    """Standardised rPPG prediction per window, ``n x T``."""
    model.eval()
    preds = []
    for b in range(0, len(windows), batch_size):
        x, w, _ = make_batch(windows[b : b + batch_size], views)
        preds.append(predict_rppg(model(x, w).Y).numpy())
    return np.concatenate(preds).astype(np.float64)


def window_hrs(preds: np.ndarray, windows: list[Window]) -> tuple[np.ndarray, np.ndarray]:
    """HR of each predicted trace and of the matching ground-truth PPG."""
    hr_pred = np.array([estimate_hr(p, w.fs) for p, w in zip(preds, windows)])
    hr_gt = np.array([estimate_hr(w.ppg, w.fs) for w in windows])
    return hr_pred, hr_gt
