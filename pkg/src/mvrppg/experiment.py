"""Experiment protocol: subject split, view masking, baselines or the fused model, reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .atoc import process_view
from .baselines import chrom, extract_rgb_trace, pos
from .container import read_dataset
from .data import WINDOW, Window, parse_views, prepare_clips, views_label
from .errors import ConfigError
from .plots import write_psd_plot, write_waveform_plot
from .sigproc import MetricsReport, TimeSeries, bandpass, estimate_hr, metrics, psd
from .synth import SCENARIOS, MultiViewClip, skin_mask
from .training import TrainConfig, TrainResult, predict, train, window_hrs

METHODS = ("pos", "chrom", "mvrd_rppg")
REPORT_COLUMNS = ("method", "scenario", "views", "mae", "rmse", "r", "n", "seed")
DECIMALS = 4


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    scenario: str | None = "movement"  # evaluation filter; None = all scenarios
    train_scenarios: list[str] | None = None  # None = every scenario present
    views: str = "lcr"
    method: str = "mvrd_rppg"
    split: float = 0.8
    seed: int = 0
    out_dir: str | None = None
    use_atoc: bool = True
    window: int = WINDOW
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        self.views = views_label(parse_views(self.views))
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 < self.split < 1.0:
            raise ConfigError(f"split must lie in (0, 1), got {self.split}")
        for s in [self.scenario] + list(self.train_scenarios or []):
            if s is not None and s not in SCENARIOS:
                raise ConfigError(f"unknown scenario {s!r}")
        if self.window < 32:
            raise ConfigError("window must be at least 32 frames")
        self.train_config()  # validate early

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        opts.setdefault("seed", self.seed)
        opts["views"] = self.views
        return TrainConfig.from_dict(opts)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment options: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)


@dataclass
class ResultRow:
    method: str
    scenario: str
    views: str
    mae: float
    rmse: float
    r: float
    n: int
    seed: int

    def __post_init__(self):
        # canonical precision so emitted tables parse back to equal rows
        for k in ("mae", "rmse", "r"):
            setattr(self, k, round(float(getattr(self, k)), DECIMALS))
        self.n, self.seed = int(self.n), int(self.seed)

    @classmethod
    def from_metrics(cls, method, scenario, views, m: MetricsReport, seed) -> "ResultRow":
        return cls(method, scenario or "all", views, m.mae, m.rmse, m.r, m.n, seed)


@dataclass
class ExperimentResult:
    row: ResultRow
    metrics: MetricsReport
    window_ids: list[tuple[str, int]]
    hr_pred: np.ndarray
    hr_gt: np.ndarray
    preds: np.ndarray
    train_result: TrainResult | None = None


def split_subjects(clips, split: float):
    """First ``split`` fraction of subjects (sorted) per scenario train, the rest test (at least one)."""
    train, test = [], []
    for scen in SCENARIOS:
        group = [c for c in clips if c.config.scenario == scen]
        subjects = sorted({c.subject for c in group})
        if not subjects:
            continue
        n_train = min(int(np.floor(split * len(subjects))), len(subjects) - 1)
        chosen = set(subjects[:n_train])
        train += [c for c in group if c.subject in chosen]
        test += [c for c in group if c.subject not in chosen]
    return train, test


def split_windows(windows: list[Window], split: float):
    train, test = [], []
    for scen in SCENARIOS:
        group = [w for w in windows if w.scenario == scen]
        subjects = sorted({w.subject for w in group})
        if not subjects:
            continue
        n_train = min(int(np.floor(split * len(subjects))), len(subjects) - 1)
        chosen = set(subjects[:n_train])
        train += [w for w in group if w.subject in chosen]
        test += [w for w in group if w.subject not in chosen]
    return train, test


def baseline_view(views: str) -> str:
    """Single-view baselines read the centre camera when present, else the first available view."""
    return "c" if "c" in views else views[0]


def baseline_windows(clips, method: str, views: str, use_atoc: bool, window: int = WINDOW):
    """Run POS or CHROM per window; returns ids, predictions, HR pairs."""
    fn = pos if method == "pos" else chrom
    v = baseline_view(views)
    ids, preds, hr_pred, hr_gt = [], [], [], []
    for clip in sorted(clips, key=lambda c: c.clip_id):
        frames = clip.frames[v]
        if use_atoc:
            frames = process_view(frames, clip.keypoints[v], clip.config.scenario).frames
        mask = skin_mask(clip.config)
        for start in range(0, clip.n_frames - window + 1, window):
            trace = extract_rgb_trace(frames[start : start + window], mask, clip.fps)
            p = fn(trace).samples
            g = clip.gt_ppg.samples[start : start + window]
            ids.append((clip.clip_id, start))
            preds.append(p)
            hr_pred.append(estimate_hr(p, clip.fps))
            hr_gt.append(estimate_hr(g, clip.fps))
    return ids, np.array(preds), np.array(hr_pred), np.array(hr_gt)


def _filter(items, scenario, key):
    return [x for x in items if scenario is None or key(x) == scenario]


def run_experiment(
    config: ExperimentConfig,
    clips: list[MultiViewClip] | None = None,
    windows: list[Window] | None = None,
    trained: TrainResult | None = None,
) -> ExperimentResult:
    """Evaluate ``config.method`` on the held-out subjects and write artefacts to ``out_dir``.

    ``windows`` (prepared with the config's ATOC setting) and ``trained`` let
    callers reuse expensive preparation or a model across view-mask arms.
    """
    if clips is None and windows is None:
        if config.dataset is None:
            raise ConfigError("no dataset given")
        clips = read_dataset(config.dataset)
    train_result = None
    if config.method in ("pos", "chrom"):
        if clips is None:
            raise ConfigError("baselines need the full-resolution clips")
        _, test = split_subjects(clips, config.split)
        test = _filter(test, config.scenario, lambda c: c.config.scenario)
        if not test:
            raise ConfigError(f"no test clips for scenario {config.scenario!r}")
        ids, preds, hr_pred, hr_gt = baseline_windows(test, config.method, config.views, config.use_atoc, config.window)
        fs = test[0].fps
        gts = {(c.clip_id, s): c.gt_ppg.samples[s : s + config.window] for c in test for s in range(0, c.n_frames, config.window)}
        gt_traces = [gts[i] for i in ids]
    else:
        if windows is None:
            pool = clips if config.train_scenarios is None else [c for c in clips if c.config.scenario in config.train_scenarios or c.config.scenario == config.scenario]
            windows = prepare_clips(pool, use_atoc=config.use_atoc, window=config.window)
        train_w, test_w = split_windows(windows, config.split)
        if config.train_scenarios is not None:
            train_w = [w for w in train_w if w.scenario in config.train_scenarios]
        test_w = _filter(test_w, config.scenario, lambda w: w.scenario)
        if not test_w:
            raise ConfigError(f"no test windows for scenario {config.scenario!r}")
        out_dir = Path(config.out_dir) if config.out_dir else None
        if trained is None:
            trained = train(train_w, config.train_config(), out_dir)
        train_result = trained
        preds = predict(trained.model, test_w, config.views)
        hr_pred, hr_gt = window_hrs(preds, test_w)
        ids = [(w.clip_id, w.start) for w in test_w]
        fs = test_w[0].fs
        gt_traces = [w.ppg for w in test_w]
    m = metrics(hr_pred, hr_gt)
    row = ResultRow.from_metrics(config.method, config.scenario, config.views, m, config.seed)
    result = ExperimentResult(row, m, ids, hr_pred, hr_gt, preds, train_result)
    if config.out_dir:
        write_artifacts(result, gt_traces, fs, Path(config.out_dir))
    return result


def write_artifacts(result: ExperimentResult, gt_traces, fs: float, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(emit_csv([result.row]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip_id", "start", "hr_pred", "hr_gt"])
    for (cid, start), hp, hg in zip(result.window_ids, result.hr_pred, result.hr_gt):
        w.writerow([cid, start, f"{hp:.{DECIMALS}f}", f"{hg:.{DECIMALS}f}"])
    (out / "predictions.csv").write_text(buf.getvalue())
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for (cid, start), pred, gt in zip(result.window_ids, result.preds, gt_traces):
        gt_z = bandpass(TimeSeries(np.asarray(gt, np.float64), fs)).samples
        gt_z = (gt_z - gt_z.mean()) / (gt_z.std() or 1.0)
        stem = f"{cid}_{start:05d}"
        write_waveform_plot(plots / f"{stem}_wave.svg", pred, gt_z, fs, f"{cid} @ frame {start}")
        write_psd_plot(
            plots / f"{stem}_psd.svg",
            psd(bandpass(TimeSeries(np.asarray(pred, np.float64), fs))),
            psd(TimeSeries(gt_z, fs)),
            f"{cid} @ frame {start}: PSD",
        )


# -- reports ------------------------------------------------------------------------


def emit_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r.method, r.scenario, r.views, f"{r.mae:.{DECIMALS}f}", f"{r.rmse:.{DECIMALS}f}",
                    f"{r.r:.{DECIMALS}f}", r.n, r.seed])
    return buf.getvalue()


def parse_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != REPORT_COLUMNS:
        raise ConfigError(f"report header must be {','.join(REPORT_COLUMNS)}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        m, s, v, mae, rmse, r, n, seed = rec
        rows.append(ResultRow(m, s, v, float(mae), float(rmse), float(r), int(n), int(seed)))
    return rows


def format_table(rows: list[ResultRow]) -> str:
    cells = [list(REPORT_COLUMNS)] + [
        [r.method, r.scenario, r.views, f"{r.mae:.{DECIMALS}f}", f"{r.rmse:.{DECIMALS}f}",
         f"{r.r:.{DECIMALS}f}", str(r.n), str(r.seed)]
        for r in rows
    ]
    widths = [max(len(c[i]) for c in cells) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(c[i].rjust(widths[i]) if i >= 3 else c[i].ljust(widths[i]) for i in range(len(c))) for c in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report(rows: list[ResultRow]) -> tuple[str, str]:
    if not rows:
        raise ConfigError("report needs at least one result")
    return emit_csv(rows), format_table(rows)


# -- ablation arms ----------------------------------------------------------------------

ABLATIONS = {
    "full": {},
    "no_atoc_mvca": {"use_atoc": False, "use_mvca": False},
    "no_atoc": {"use_atoc": False},
    "no_mvca": {"use_mvca": False},
    "no_pearson": {"lambda_pearson": 0.0},
    "no_psd": {"lambda_psd": 0.0},
    "no_adv": {"lambda_g": 0.0},
}


def ablation_config(base: ExperimentConfig, arm: str) -> ExperimentConfig:
    """Experiment config for one component on/off arm."""
    if arm not in ABLATIONS:
        raise ConfigError(f"unknown ablation arm {arm!r}")
    d = base.to_dict()
    train = dict(d["train"])
    model = dict(train.get("model", {}))
    for k, v in ABLATIONS[arm].items():
        if k == "use_atoc":
            d["use_atoc"] = v
        elif k == "use_mvca":
            model["use_mvca"] = v
        else:
            train[k] = v
    if model:
        train["model"] = model
    d["train"] = train
    if base.out_dir:
        d["out_dir"] = str(Path(base.out_dir) / arm)
    return ExperimentConfig.from_dict(d)
