"""On-disk dataset container.

Layout of a dataset directory::

    manifest.json
    <clip_id>/view_{l,c,r}.mvf     frames    "MVF1" H W C T (u32 LE), uint8 in H,W,C,T order
    <clip_id>/keypoints_{l,c,r}.bin          "MVK1" K T (u32 LE), float32 LE in K,2,T order
    <clip_id>/ppg.mvs               signals   "MVS1" n (u32 LE), float32 LE
    <clip_id>/hr.mvs

``manifest.json`` schema (format_version 1)::

    {"format_version": 1,
     "clips": [{"id": str, "subject": int, "scenario": str, "fps": float,
                "T": int, "seed": int, "config": {SceneConfig fields},
                "files": {"view_l": relpath, ..., "ppg": relpath, "hr": relpath}}]}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptHeaderError, MissingFileError, TruncatedPayloadError, VersionMismatchError
from .sigproc import TimeSeries
from .synth import VIEWS, MultiViewClip, SceneConfig

FORMAT_VERSION = 1
SIGNAL_MAGIC = b"MVS1"
FRAMES_MAGIC = b"MVF1"
KEYPOINTS_MAGIC = b"MVK1"
PARAMS_MAGIC = b"MVP1"


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    return path.read_bytes()


def _parse(path, magic: bytes, n_fields: int, itemsize: int, count_fn) -> tuple[tuple[int, ...], bytes]:
    raw = _read_bytes(path)
    head = 4 + 4 * n_fields
    if len(raw) < head:
        raise TruncatedPayloadError(f"{path}: header truncated")
    if raw[:4] != magic:
        raise CorruptHeaderError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    dims = struct.unpack(f"<{n_fields}I", raw[4:head])
    expected = count_fn(dims) * itemsize
    payload = raw[head:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise CorruptHeaderError(f"{path}: {len(payload) - expected} trailing bytes")
    return dims, payload


def encode_signal(x) -> bytes:
    x = np.ascontiguousarray(x, dtype="<f4")
    return SIGNAL_MAGIC + struct.pack("<I", x.shape[0]) + x.tobytes()


def write_signal(path, x) -> None:
    Path(path).write_bytes(encode_signal(x))


def read_signal(path) -> np.ndarray:
    (n,), payload = _parse(path, SIGNAL_MAGIC, 1, 4, lambda d: d[0])
    return np.frombuffer(payload, dtype="<f4").astype(np.float32)


def write_frames(path, frames) -> None:
    """``frames`` is time-major ``T x H x W x C`` uint8."""
    frames = np.asarray(frames, dtype=np.uint8)
    T, H, W, C = frames.shape
    body = np.ascontiguousarray(frames.transpose(1, 2, 3, 0)).tobytes()
    Path(path).write_bytes(FRAMES_MAGIC + struct.pack("<4I", H, W, C, T) + body)


def read_frames(path) -> np.ndarray:
    (H, W, C, T), payload = _parse(path, FRAMES_MAGIC, 4, 1, lambda d: d[0] * d[1] * d[2] * d[3])
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(H, W, C, T)
    return np.ascontiguousarray(arr.transpose(3, 0, 1, 2))


def write_keypoints(path, kps) -> None:
    """``kps`` is ``T x K x 2``; stored as ``K x 2 x T``."""
    kps = np.asarray(kps, dtype="<f4")
    T, K, _ = kps.shape
    body = np.ascontiguousarray(kps.transpose(1, 2, 0)).tobytes()
    Path(path).write_bytes(KEYPOINTS_MAGIC + struct.pack("<2I", K, T) + body)


def read_keypoints(path) -> np.ndarray:
    (K, T), payload = _parse(path, KEYPOINTS_MAGIC, 2, 4, lambda d: d[0] * 2 * d[1])
    arr = np.frombuffer(payload, dtype="<f4").reshape(K, 2, T)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32)


def write_pgm(path, mask) -> None:
    """Binary P5 dump of a 2-D mask (debug aid)."""
    img = (np.asarray(mask) > 0).astype(np.uint8) * 255
    H, W = img.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + img.tobytes())


def _clip_files(clip_id: str) -> dict[str, str]:
    files = {f"view_{v}": f"{clip_id}/view_{v}.mvf" for v in VIEWS}
    files.update({f"keypoints_{v}": f"{clip_id}/keypoints_{v}.bin" for v in VIEWS})
    files["ppg"] = f"{clip_id}/ppg.mvs"
    files["hr"] = f"{clip_id}/hr.mvs"
    return files


def write_dataset(clips, directory) -> dict:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for clip in clips:
        files = _clip_files(clip.clip_id)
        (root / clip.clip_id).mkdir(exist_ok=True)
        for v in VIEWS:
            write_frames(root / files[f"view_{v}"], clip.frames[v])
            write_keypoints(root / files[f"keypoints_{v}"], clip.keypoints[v])
        write_signal(root / files["ppg"], clip.gt_ppg.samples)
        write_signal(root / files["hr"], clip.hr_trace)
        entries.append(
            {
                "id": clip.clip_id,
                "subject": clip.subject,
                "scenario": clip.config.scenario,
                "fps": clip.fps,
                "T": clip.n_frames,
                "seed": clip.config.seed,
                "config": clip.config.to_dict(),
                "files": files,
            }
        )
    manifest = {"format_version": FORMAT_VERSION, "clips": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest


def read_manifest(directory) -> dict:
    raw = _read_bytes(Path(directory) / "manifest.json")
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"manifest.json unreadable: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"manifest format_version {manifest.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    return manifest


def read_clip(root: Path, entry: dict) -> MultiViewClip:
    files = entry["files"]
    for rel in files.values():
        if not (root / rel).is_file():
            raise MissingFileError(root / rel)
    frames = {v: read_frames(root / files[f"view_{v}"]) for v in VIEWS}
    kps = {v: read_keypoints(root / files[f"keypoints_{v}"]) for v in VIEWS}
    ppg = read_signal(root / files["ppg"])
    hr = read_signal(root / files["hr"])
    T = entry["T"]
    if any(f.shape[0] != T for f in frames.values()) or ppg.shape[0] != T:
        raise CorruptHeaderError(f"{entry['id']}: frame count disagrees with manifest T={T}")
    return MultiViewClip(
        frames=frames,
        keypoints=kps,
        gt_ppg=TimeSeries(ppg, float(entry["fps"])),
        hr_trace=hr,
        config=SceneConfig.from_dict(entry["config"]),
        subject=int(entry["subject"]),
    )


def read_dataset(directory, scenario: str | None = None) -> list[MultiViewClip]:
    root = Path(directory)
    manifest = read_manifest(root)
    return [
        read_clip(root, e) for e in manifest["clips"] if scenario is None or e["scenario"] == scenario
    ]
