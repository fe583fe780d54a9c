"""Seeded synthetic single-bead-wall runs: toolpath, labels, audio and melt-pool frames.

There is no process physics here. Each class gets a signal signature in the
direction the monitoring literature reports (defective zones are louder and
show a brighter, larger melt pool; laser-off is near silent and dark), and a
fraction of samples is made deliberately ambiguous in one modality at a time
so that neither sensor alone separates defect-free from defective.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import fileio

CLASSES = ("defect_free", "defective", "laser_off")
DEFECT_FREE, DEFECTIVE, LASER_OFF = 0, 1, 2
DWELL_CHOICES = (0, 5, 10)

FRAME_PERIOD_US = 100_000


@dataclass(frozen=True)
class WallSpec:
    n_layers: int = 50
    bead_length_mm: float = 80.0
    travel_speed_mm_s: float = 25.0
    dwell_s: int = 0
    layer_thickness_mm: float = 0.85
    laser_power_kw: float = 2.4

    def __post_init__(self):
        if self.n_layers < 1 or self.bead_length_mm <= 0 or self.layer_thickness_mm <= 0:
            raise ValueError("wall geometry must be positive")
        if not 25.0 <= self.travel_speed_mm_s <= 27.5:
            raise ValueError(f"travel speed {self.travel_speed_mm_s} outside [25, 27.5] mm/s")
        if self.dwell_s not in DWELL_CHOICES:
            raise ValueError(f"dwell_s must be one of {DWELL_CHOICES}, got {self.dwell_s}")
        if not 2.3 <= self.laser_power_kw <= 2.5:
            raise ValueError(f"laser power {self.laser_power_kw} outside [2.3, 2.5] kW")

    @property
    def motion_us(self) -> int:
        return int(round(self.bead_length_mm / self.travel_speed_mm_s * 1e6))


@dataclass(frozen=True)
class DefectOnsetModel:
    base_onset_layer: int = 20
    dwell_gain_layers_per_s: float = 1.0
    crack_rate_hz: float = 2.0

    def onset_layer(self, spec: WallSpec) -> int:
        return int(round(self.base_onset_layer + self.dwell_gain_layers_per_s * spec.dwell_s))


@dataclass(frozen=True)
class SimParams:
    """Every generator constant in one place."""

    sample_rate_hz: int = 44100
    pose_rate_hz: int = 250
    lead_s: float = 1.0
    capture_margin_s: float = 0.4
    # audio
    sigma_free: float = 0.05
    sigma_defective: float = 0.12
    sigma_off: float = 0.01
    sigma_ambiguous: Tuple[float, float] = (0.07, 0.095)
    hum_hz: float = 150.0
    hum_amp: float = 0.03
    resonance_hz: float = 6000.0
    resonance_amp: float = 0.06
    burst_peak: float = 0.8
    burst_ms: float = 5.0
    burst_tau_ms: float = 1.0
    burst_carrier_hz: float = 9000.0
    # frames
    resolution: Tuple[int, int] = (160, 120)  # (width, height)
    free_peak: float = 0.6
    free_radius_px: float = 8.0
    defective_peak: float = 0.95
    defective_radius_px: float = 12.0
    ambiguous_peak: Tuple[float, float] = (0.72, 0.84)
    ambiguous_radius_px: Tuple[float, float] = (9.0, 11.0)
    center_jitter_px: float = 3.0
    defective_flicker: float = 0.05
    defective_radius_flicker_px: float = 1.5
    pixel_noise: float = 0.02
    off_max: float = 0.04
    # modality ambiguity (per 100 ms slot, defect-free/defective only)
    visual_ambiguity: float = 0.13
    acoustic_ambiguity: float = 0.12
    transition_layers: int = 2
    transition_boost: float = 2.0


DEFAULT_WALLS = (
    WallSpec(travel_speed_mm_s=25.0, dwell_s=0, laser_power_kw=2.3),
    WallSpec(travel_speed_mm_s=26.25, dwell_s=5, laser_power_kw=2.4),
    WallSpec(travel_speed_mm_s=27.5, dwell_s=10, laser_power_kw=2.5),
)


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys]).generate_state(1, np.uint64)[0])


# --- timeline ---------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    t_start_us: int
    t_end_us: int
    label: int
    layer: int  # -1 before the first layer; dwell intervals carry the preceding layer


@dataclass
class GroundTruth:
    intervals: List[Interval]
    cracks_us: np.ndarray
    onset_layer: int

    def __post_init__(self):
        self._starts = np.array([iv.t_start_us for iv in self.intervals], dtype=np.int64)
        self._labels = np.array([iv.label for iv in self.intervals], dtype=np.int64)
        self._layers = np.array([iv.layer for iv in self.intervals], dtype=np.int64)

    @property
    def t_end_us(self) -> int:
        return self.intervals[-1].t_end_us if self.intervals else 0

    def interval_index(self, t_us):
        t = np.asarray(t_us, dtype=np.int64)
        if np.any(t < 0) or np.any(t > self.t_end_us):
            raise ValueError(f"time outside the run [0, {self.t_end_us}] us")
        return np.searchsorted(self._starts, t, side="right") - 1

    def label_at(self, t_us):
        """Label of the interval containing t (the run end belongs to the last interval)."""
        out = self._labels[self.interval_index(t_us)]
        return int(out) if out.ndim == 0 else out

    def layer_at(self, t_us):
        out = self._layers[self.interval_index(t_us)]
        return int(out) if out.ndim == 0 else out


def layer_start_times(spec: WallSpec, params: SimParams = SimParams()) -> np.ndarray:
    lead = int(round(params.lead_s * 1e6))
    return lead + np.arange(spec.n_layers, dtype=np.int64) * (spec.motion_us + spec.dwell_s * 1_000_000)


def run_end_us(spec: WallSpec, params: SimParams = SimParams()) -> int:
    lead = int(round(params.lead_s * 1e6))
    return int(layer_start_times(spec, params)[-1] + spec.motion_us + lead)


def position_at(spec: WallSpec, t_us, params: SimParams = SimParams()) -> np.ndarray:
    """Analytic tool-centre-point position (mm) at time(s) t, shape (..., 3)."""
    t = np.asarray(t_us, dtype=np.int64)
    starts = layer_start_times(spec, params)
    k = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, spec.n_layers - 1)
    into = np.clip(t - starts[k], 0, spec.motion_us)
    frac = into / spec.motion_us
    before = t < starts[0]
    frac = np.where(before, 0.0, frac)
    forward = (k % 2) == 0
    x = np.where(forward, frac, 1.0 - frac) * spec.bead_length_mm
    y = np.zeros_like(x)
    z = k * spec.layer_thickness_mm
    return np.stack([x, y, z.astype(np.float64)], axis=-1)


@dataclass
class PoseTrack:
    t_us: np.ndarray
    xyz: np.ndarray

    def __len__(self):
        return len(self.t_us)


def gen_toolpath(spec: WallSpec, pose_rate_hz: int = 250, params: SimParams = SimParams()) -> PoseTrack:
    if pose_rate_hz <= 0:
        raise ValueError("pose_rate_hz must be positive")
    period = 1_000_000 // pose_rate_hz
    t = np.arange(0, run_end_us(spec, params) + 1, period, dtype=np.int64)
    return PoseTrack(t, position_at(spec, t, params))


def gen_ground_truth(spec: WallSpec, onset: DefectOnsetModel = DefectOnsetModel(), seed: int = 0,
                     params: SimParams = SimParams()) -> GroundTruth:
    onset_layer = onset.onset_layer(spec)
    if onset_layer > spec.n_layers:
        raise ValueError(f"onset layer {onset_layer} beyond n_layers={spec.n_layers}")
    rng = np.random.default_rng(seed)
    starts = layer_start_times(spec, params)
    intervals = [Interval(0, int(starts[0]), LASER_OFF, -1)]
    cracks = []
    for k, s in enumerate(starts):
        s = int(s)
        e = s + spec.motion_us
        label = DEFECTIVE if k >= onset_layer else DEFECT_FREE
        intervals.append(Interval(s, e, label, k))
        if label == DEFECTIVE:
            n = rng.poisson(onset.crack_rate_hz * spec.motion_us / 1e6)
            cracks.append(np.sort(rng.integers(s, e, size=n)))
        nxt = int(starts[k + 1]) if k + 1 < len(starts) else run_end_us(spec, params)
        if nxt > e:
            intervals.append(Interval(e, nxt, LASER_OFF, k))
    crack_arr = np.concatenate(cracks).astype(np.int64) if cracks else np.zeros(0, dtype=np.int64)
    return GroundTruth(intervals, crack_arr, onset_layer)


def capture_windows(spec: WallSpec, params: SimParams = SimParams()) -> List[Tuple[int, int]]:
    """Sensor acquisition windows on the frame grid: each layer's motion plus a margin.

    Long dwells are not recorded in full; the camera and microphone capture
    ``capture_margin_s`` of laser-off on either side of every bead.
    """
    margin = int(round(params.capture_margin_s * 1e6))
    end = run_end_us(spec, params)
    last = end // FRAME_PERIOD_US * FRAME_PERIOD_US
    out: List[Tuple[int, int]] = []
    for s in layer_start_times(spec, params):
        a = max(0, (int(s) - margin) // FRAME_PERIOD_US * FRAME_PERIOD_US)
        b = min(last, -(-(int(s) + spec.motion_us + margin) // FRAME_PERIOD_US) * FRAME_PERIOD_US)
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def window_frame_times(windows) -> np.ndarray:
    """Frame timestamps: every grid point of a window after its first 100 ms of audio."""
    return np.concatenate([np.arange(a + FRAME_PERIOD_US, b + 1, FRAME_PERIOD_US, dtype=np.int64)
                           for a, b in windows]) if windows else np.zeros(0, dtype=np.int64)


# --- modality ambiguity -----------------------------------------------------

def _ambiguity_prob(truth: GroundTruth, t_us: int, base: float, params: SimParams) -> float:
    label = truth.label_at(t_us)
    if label == LASER_OFF:
        return 0.0
    if abs(truth.layer_at(t_us) - truth.onset_layer) <= params.transition_layers:
        return min(1.0, base * params.transition_boost)
    return base


def visual_ambiguous(truth: GroundTruth, t_us: int, seed: int, params: SimParams = SimParams()) -> bool:
    p = _ambiguity_prob(truth, t_us, params.visual_ambiguity, params)
    return bool(np.random.default_rng([seed, 11, t_us]).random() < p)


def acoustic_ambiguous(truth: GroundTruth, slot: int, seed: int, params: SimParams = SimParams()) -> bool:
    """Whether 100 ms audio slot ``slot`` (covering [slot, slot+1) * 100 ms) is ambiguous."""
    t_mid = min(slot * FRAME_PERIOD_US + FRAME_PERIOD_US // 2, truth.t_end_us)
    p = _ambiguity_prob(truth, t_mid, params.acoustic_ambiguity, params)
    return bool(np.random.default_rng([seed, 12, slot]).random() < p)


# --- audio ------------------------------------------------------------------

def _slot_audio(truth: GroundTruth, slot: int, seed: int, sr: int, params: SimParams,
                amb_cache: Dict[int, bool]) -> np.ndarray:
    per_slot = sr * FRAME_PERIOD_US // 1_000_000
    n0 = slot * per_slot
    n = np.arange(n0, n0 + per_slot, dtype=np.int64)
    t_us = np.minimum(n * 1_000_000 // sr, truth.t_end_us)
    t_s = n / sr
    labels = truth.label_at(t_us)
    rng = np.random.default_rng([seed, 21, slot])
    noise = rng.standard_normal(per_slot)
    res_f = params.resonance_hz * (1.0 + 0.02 * rng.uniform(-1, 1))
    res_phase = rng.uniform(0, 2 * np.pi)

    def amb(s):
        if s not in amb_cache:
            amb_cache[s] = acoustic_ambiguous(truth, s, seed, params)
        return amb_cache[s]

    sigma = np.select([labels == DEFECT_FREE, labels == DEFECTIVE], [params.sigma_free, params.sigma_defective],
                      params.sigma_off)
    hum = np.where(labels == DEFECT_FREE, params.hum_amp, 0.0)
    res = np.where(labels == DEFECTIVE, params.resonance_amp, 0.0)
    if amb(slot):
        active = labels != LASER_OFF
        lo, hi = params.sigma_ambiguous
        sigma = np.where(active, rng.uniform(lo, hi), sigma)
        hum = np.where(active, params.hum_amp / 2, hum)
        res = np.where(active, params.resonance_amp / 2, res)
    x = sigma * noise
    x += hum * np.sin(2 * np.pi * params.hum_hz * t_s)
    x += res * np.sin(2 * np.pi * res_f * t_s + res_phase)

    burst_us = int(params.burst_ms * 1000)
    t0 = int(t_us[0])
    lo_i, hi_i = np.searchsorted(truth.cracks_us, [t0 - burst_us, t0 + FRAME_PERIOD_US])
    for tc in truth.cracks_us[lo_i:hi_i]:
        if amb(int(tc) // FRAME_PERIOD_US):
            continue  # crack not audible in an ambiguous slot
        nc = -(-int(tc) * sr // 1_000_000)  # first sample at or after the crack
        rel = (n - nc) / sr
        on = (rel >= 0) & (rel < params.burst_ms / 1000)
        if on.any():
            env = params.burst_peak * np.exp(-rel[on] / (params.burst_tau_ms / 1000))
            x[on] += env * np.cos(2 * np.pi * params.burst_carrier_hz * rel[on])
    return np.clip(x, -1.0, 1.0)


def synth_audio(truth: GroundTruth, sample_rate_hz: int = 44100, seed: int = 0, start_sample: int = 0,
                n_samples: Optional[int] = None, params: SimParams = SimParams()) -> np.ndarray:
    """Microphone signal for samples [start_sample, start_sample + n_samples) of the run.

    Content depends only on (truth, seed, absolute sample index), so any span
    is identical to the same span cut from a whole-run synthesis.
    """
    if not truth.intervals or truth.t_end_us == 0:
        return np.zeros(0, dtype=np.float32)
    if (sample_rate_hz * FRAME_PERIOD_US) % 1_000_000:
        raise ValueError("sample rate must give an integer number of samples per 100 ms")
    total = truth.t_end_us * sample_rate_hz // 1_000_000
    if n_samples is None:
        n_samples = total - start_sample
    end = start_sample + n_samples
    if start_sample < 0 or end > total:
        raise ValueError(f"sample span [{start_sample}, {end}) outside run of {total} samples")
    per_slot = sample_rate_hz * FRAME_PERIOD_US // 1_000_000
    out = np.empty(n_samples, dtype=np.float32)
    cache: Dict[int, bool] = {}
    for slot in range(start_sample // per_slot, -(-end // per_slot)):
        a = slot * per_slot
        seg = _slot_audio(truth, slot, seed, sample_rate_hz, params, cache)
        lo, hi = max(a, start_sample), min(a + per_slot, end)
        out[lo - start_sample:hi - start_sample] = seg[lo - a:hi - a]
    return out


# --- frames -----------------------------------------------------------------

def synth_frame(truth: GroundTruth, t_us: int, resolution=None, seed: int = 0,
                params: SimParams = SimParams()) -> np.ndarray:
    """Coaxial melt-pool image (float, [0, 1]) of shape (height, width)."""
    if not 0 <= t_us <= truth.t_end_us:
        raise ValueError(f"t={t_us} us outside the run [0, {truth.t_end_us}]")
    w, h = resolution or params.resolution
    scale = w / params.resolution[0]
    rng = np.random.default_rng([seed, 31, int(t_us)])
    label = truth.label_at(t_us)
    if label == LASER_OFF:
        return rng.uniform(0.0, params.off_max, size=(h, w))
    if visual_ambiguous(truth, t_us, seed, params):
        peak = rng.uniform(*params.ambiguous_peak)
        radius = rng.uniform(*params.ambiguous_radius_px)
    elif label == DEFECTIVE:
        peak = params.defective_peak + rng.uniform(-params.defective_flicker, params.defective_flicker)
        radius = params.defective_radius_px + rng.uniform(-1, 1) * params.defective_radius_flicker_px
    else:
        peak = params.free_peak + rng.uniform(-0.02, 0.02)
        radius = params.free_radius_px + rng.uniform(-0.5, 0.5)
    radius *= scale
    cx = w / 2 + rng.uniform(-1, 1) * params.center_jitter_px * scale
    cy = h / 2 + rng.uniform(-1, 1) * params.center_jitter_px * scale
    yy, xx = np.mgrid[0:h, 0:w]
    blob = min(peak, 1.0) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius ** 2))
    img = blob + rng.normal(0.0, params.pixel_noise, size=(h, w))
    return np.clip(img, 0.0, 1.0)


# --- whole walls --------------------------------------------------------------

@dataclass
class WallData:
    spec: WallSpec
    seed: int
    truth: GroundTruth
    poses: PoseTrack
    windows: List[Tuple[int, int]]
    audio: List[Tuple[int, np.ndarray]]  # (t_start_us, float32 samples) per window
    frame_times: np.ndarray
    frames: List[np.ndarray]  # uint8 (h, w)
    sample_rate_hz: int

    def frame_labels(self) -> np.ndarray:
        return self.truth.label_at(self.frame_times)


def simulate_wall(spec: WallSpec, seed: int, onset: DefectOnsetModel = DefectOnsetModel(),
                  params: SimParams = SimParams(), windows: Optional[Sequence[Tuple[int, int]]] = None) -> WallData:
    """``windows`` overrides the acquisition windows (grid-aligned (start, end) pairs in us)."""
    truth = gen_ground_truth(spec, onset, seed, params)
    poses = gen_toolpath(spec, params.pose_rate_hz, params)
    windows = capture_windows(spec, params) if windows is None else [(int(a), int(b)) for a, b in windows]
    sr = params.sample_rate_hz
    audio = []
    for a, b in windows:
        start = a * sr // 1_000_000
        audio.append((a, synth_audio(truth, sr, seed, start, (b - a) * sr // 1_000_000, params)))
    times = window_frame_times(windows)
    frames = [fileio.to_u8(synth_frame(truth, int(t), None, seed, params)) for t in times]
    return WallData(spec, seed, truth, poses, windows, audio, times, frames, sr)


def simulate(specs: Sequence[WallSpec] = DEFAULT_WALLS, seed: int = 0, onset: DefectOnsetModel = DefectOnsetModel(),
             params: SimParams = SimParams()) -> List[WallData]:
    return [simulate_wall(s, derive_seed(seed, i), onset, params) for i, s in enumerate(specs)]


class DatasetWriteError(OSError):
    pass


def _write_wall(wall: WallData, d: Path) -> None:
    (d / "frames").mkdir(parents=True)
    samples = np.concatenate([x for _, x in wall.audio]) if wall.audio else np.zeros(0, np.float32)
    fileio.write_wav(d / "audio.wav", samples, wall.sample_rate_hz)
    rows, off = [], 0
    for t0, x in wall.audio:
        rows.append((t0, off, len(x)))
        off += len(x)
    fileio.write_csv(d / "audio_segments.csv", ("t_start_us", "sample_offset", "n_samples"), rows)
    for t, img in zip(wall.frame_times, wall.frames):
        fileio.write_pgm(d / "frames" / f"{int(t):012d}.pgm", img)
    fileio.write_csv(d / "poses.csv", ("t_us", "x_mm", "y_mm", "z_mm"),
                     ((int(t), repr(float(x)), repr(float(y)), repr(float(z)))
                      for t, (x, y, z) in zip(wall.poses.t_us, wall.poses.xyz)))
    fileio.write_csv(d / "truth.csv", ("t_start_us", "t_end_us", "label"),
                     ((iv.t_start_us, iv.t_end_us, CLASSES[iv.label]) for iv in wall.truth.intervals))
    fileio.write_csv(d / "cracks.csv", ("t_us",), ((int(t),) for t in wall.truth.cracks_us))


def write_dataset(specs: Sequence[WallSpec] = DEFAULT_WALLS, out_dir="dataset", seed: int = 0,
                  onset: DefectOnsetModel = DefectOnsetModel(), params: SimParams = SimParams()) -> dict:
    """Simulate and write every wall; returns the manifest (also saved as manifest.json).

    Output goes to a sibling temporary directory that is renamed into place, so
    a failure leaves nothing behind.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise DatasetWriteError(f"{out} exists and is not empty")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".sim-", dir=out.parent))
    except OSError as exc:
        raise DatasetWriteError(f"cannot write under {out.parent}: {exc}") from exc
    try:
        walls_meta = []
        totals = {c: 0 for c in CLASSES}
        for i, spec in enumerate(specs):
            wall = simulate_wall(spec, derive_seed(seed, i), onset, params)
            name = f"wall_{i:02d}"
            _write_wall(wall, tmp / name)
            labels = wall.frame_labels()
            counts = {c: int(np.sum(labels == k)) for k, c in enumerate(CLASSES)}
            for c in CLASSES:
                totals[c] += counts[c]
            walls_meta.append({
                "dir": name,
                "seed": wall.seed,
                "spec": asdict(spec),
                "onset_layer": wall.truth.onset_layer,
                "t_end_us": wall.truth.t_end_us,
                "n_frames": len(wall.frame_times),
                "n_poses": len(wall.poses),
                "n_cracks": int(len(wall.truth.cracks_us)),
                "counts": counts,
            })
            del wall
        manifest = {
            "format": "lded-sim/1",
            "seed": int(seed),
            "sample_rate_hz": params.sample_rate_hz,
            "frame_period_us": FRAME_PERIOD_US,
            "pose_rate_hz": params.pose_rate_hz,
            "classes": list(CLASSES),
            "onset_model": asdict(onset),
            "params": asdict(params),
            "walls": walls_meta,
            "counts": totals,
            "total_fused_samples": int(sum(totals.values())),
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    except BaseException as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        if isinstance(exc, OSError):
            raise DatasetWriteError(f"failed writing dataset to {out}: {exc}") from exc
        raise
    return manifest
