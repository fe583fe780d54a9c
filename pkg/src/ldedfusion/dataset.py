"""Fused samples and model inputs, built offline from simulated or on-disk walls."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import dsp, fileio
from .models import IMAGE_HW, resize_bilinear
from .nn.train import FeatureSet
from .sim import CLASSES, FRAME_PERIOD_US, GroundTruth, Interval, PoseTrack, WallData, WallSpec

WINDOW_US = FRAME_PERIOD_US
FEATURE_STREAMS = ("image", "logmel", "mfcc")


@dataclass
class FusedSample:
    """One frame and the 100 ms of audio that ends at its timestamp."""

    t_us: int
    audio: dsp.AudioChunk
    image: np.ndarray  # (30, 30) in [0, 1]
    label: Optional[int] = None


def frame_to_image(frame_u8: np.ndarray, hw=IMAGE_HW) -> np.ndarray:
    """uint8 camera frame -> model-sized image in [0, 1]."""
    return resize_bilinear(np.asarray(frame_u8, dtype=np.float64) / 255.0, *hw)


def window_indices(t_us: int, seg_t0_us: int, sample_rate_hz: int, window_us: int = WINDOW_US) -> Tuple[int, int]:
    """Sample indices [start, end) of the window ending at ``t_us`` in a segment starting at ``seg_t0_us``."""
    end = (t_us - seg_t0_us) * sample_rate_hz // 1_000_000
    return end - window_us * sample_rate_hz // 1_000_000, end


def sample_features(sample: FusedSample, streams: Sequence[str] = FEATURE_STREAMS,
                    mel_cfg: dsp.MelConfig = dsp.MelConfig()) -> Dict[str, np.ndarray]:
    """Model inputs for one sample, each shaped (1, H, W)."""
    out = {}
    for name in streams:
        if name == "image":
            x = sample.image
        elif name == "logmel":
            x = dsp.mel_spectrogram(sample.audio, mel_cfg).values
        elif name == "mfcc":
            x = dsp.mfcc(sample.audio, mel_cfg)
        else:
            raise ValueError(f"unknown input stream {name!r}")
        out[name] = np.asarray(x, dtype=np.float32)[None]
    return out


def offline_fused_samples(wall: WallData, window_us: int = WINDOW_US) -> Iterator[FusedSample]:
    """Pair every frame with its preceding audio window by direct index arithmetic."""
    sr = wall.sample_rate_hz
    labels = wall.truth.label_at(wall.frame_times) if len(wall.frame_times) else []
    seg_starts = np.array([t0 for t0, _ in wall.audio], dtype=np.int64)
    for t, frame, label in zip(wall.frame_times, wall.frames, labels):
        t = int(t)
        k = int(np.searchsorted(seg_starts, t - window_us, side="right")) - 1
        if k < 0:
            continue
        t0, samples = wall.audio[k]
        a, b = window_indices(t, t0, sr, window_us)
        if a < 0 or b > len(samples):
            continue
        chunk = dsp.AudioChunk(samples[a:b], sr, t - window_us)
        yield FusedSample(t, chunk, frame_to_image(frame), int(label))


@dataclass
class SampleIndex:
    wall: np.ndarray
    t_us: np.ndarray


def build_features(walls: Sequence[WallData], streams: Sequence[str] = FEATURE_STREAMS,
                   mel_cfg: dsp.MelConfig = dsp.MelConfig()) -> Tuple[FeatureSet, SampleIndex]:
    feats: Dict[str, List[np.ndarray]] = {s: [] for s in streams}
    labels, wall_idx, times = [], [], []
    for w, wall in enumerate(walls):
        for sample in offline_fused_samples(wall):
            for k, v in sample_features(sample, streams, mel_cfg).items():
                feats[k].append(v)
            labels.append(sample.label)
            wall_idx.append(w)
            times.append(sample.t_us)
    fs = FeatureSet({k: np.stack(v) for k, v in feats.items()}, np.asarray(labels, dtype=np.int64))
    return fs, SampleIndex(np.asarray(wall_idx), np.asarray(times, dtype=np.int64))


# --- on-disk datasets -------------------------------------------------------------

def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    return json.loads(path.read_text())


def load_poses(path) -> PoseTrack:
    _, rows = fileio.read_csv(path)
    t = np.array([int(r[0]) for r in rows], dtype=np.int64)
    xyz = np.array([[float(v) for v in r[1:4]] for r in rows], dtype=np.float64).reshape(-1, 3)
    return PoseTrack(t, xyz)


def load_truth(path, cracks_path=None, onset_layer: int = -1) -> GroundTruth:
    _, rows = fileio.read_csv(path)
    intervals = [Interval(int(a), int(b), CLASSES.index(lab), -1) for a, b, lab in rows]
    cracks = np.zeros(0, dtype=np.int64)
    if cracks_path is not None and Path(cracks_path).exists():
        _, crows = fileio.read_csv(cracks_path)
        cracks = np.array([int(r[0]) for r in crows], dtype=np.int64)
    return GroundTruth(intervals, cracks, onset_layer)


def load_wall(root, meta: dict, load_frames: bool = True) -> WallData:
    d = Path(root) / meta["dir"]
    samples, sr = fileio.read_wav(d / "audio.wav")
    _, seg_rows = fileio.read_csv(d / "audio_segments.csv")
    audio, windows = [], []
    for t0, off, n in seg_rows:
        t0, off, n = int(t0), int(off), int(n)
        audio.append((t0, samples[off:off + n]))
        windows.append((t0, t0 + n * 1_000_000 // sr))
    frame_paths = sorted((d / "frames").glob("*.pgm"))
    times = np.array([int(p.stem) for p in frame_paths], dtype=np.int64)
    frames = [fileio.read_pgm(p) for p in frame_paths] if load_frames else []
    truth = load_truth(d / "truth.csv", d / "cracks.csv", meta.get("onset_layer", -1))
    return WallData(WallSpec(**meta["spec"]), meta["seed"], truth, load_poses(d / "poses.csv"),
                    windows, audio, times, frames, sr)


def load_dataset(root) -> Tuple[dict, List[WallData]]:
    manifest = load_manifest(root)
    return manifest, [load_wall(root, m) for m in manifest["walls"]]
