"""Online monitoring graph: source -> synchronizer -> inference -> registration -> sink.

Stages talk only through bus topics. The sequential scheduler interleaves them
on one thread (deterministic, used for equivalence checks); the threaded
scheduler gives each stage its own worker.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Iterable, List, Optional, Sequence

import numpy as np

from ..dataset import FEATURE_STREAMS, FusedSample, offline_fused_samples, sample_features
from ..dsp import AudioChunk, MelConfig
from ..nn.model import Model
from ..nn.train import predict
from ..sim import CLASSES, WallData
from .bus import Bus, TimestampedMsg
from .defect_map import DefectMapRecord
from .pose import PoseBuffer, UnregisteredError, lookup_track
from .sources import stream_offsets
from .sync import Synchronizer

TOPICS = ("audio", "frame", "pose", "fused", "prediction")


class ModelMismatchError(ValueError):
    pass


@dataclass
class RunReport:
    frames: int = 0
    fused: int = 0
    dropped: int = 0
    predicted: int = 0
    unregistered: int = 0
    queue_drops: int = 0
    latencies_ms: List[float] = field(default_factory=list, repr=False)
    wall_time_s: float = 0.0

    def latency_percentiles(self) -> dict:
        if not self.latencies_ms:
            return {"p50": None, "p90": None, "p99": None, "max": None}
        lat = np.asarray(self.latencies_ms)
        p50, p90, p99 = np.percentile(lat, [50, 90, 99])
        return {"p50": float(p50), "p90": float(p90), "p99": float(p99), "max": float(lat.max())}

    def to_dict(self) -> dict:
        return {"frames": self.frames, "fused": self.fused, "dropped": self.dropped,
                "predicted": self.predicted, "unregistered": self.unregistered,
                "queue_drops": self.queue_drops, "latency_ms": self.latency_percentiles(),
                "wall_time_s": self.wall_time_s}


def expected_input_shapes(streams: Sequence[str], mel_cfg: MelConfig = MelConfig(), sample_rate_hz: int = 44100):
    n = sample_rate_hz // 10
    probe = FusedSample(0, AudioChunk(np.zeros(n, np.float32), sample_rate_hz, 0), np.zeros((30, 30)))
    return {k: tuple(v.shape) for k, v in sample_features(probe, streams, mel_cfg).items()}


def check_model(model: Model, mel_cfg: MelConfig = MelConfig(), sample_rate_hz: int = 44100) -> None:
    unknown = [s for s in model.stream_names if s not in FEATURE_STREAMS]
    if unknown:
        raise ModelMismatchError(f"model expects unknown input stream(s) {unknown}")
    want = expected_input_shapes(model.stream_names, mel_cfg, sample_rate_hz)
    for name, shape in model.input_shapes.items():
        if tuple(shape) != want[name]:
            raise ModelMismatchError(f"stream {name!r}: model expects {tuple(shape)}, transforms produce {want[name]}")


def _record(t_us: int, xyz, cls: int, probs) -> DefectMapRecord:
    return DefectMapRecord(int(t_us), xyz[0], xyz[1], xyz[2], CLASSES[cls], tuple(float(p) for p in probs))


@dataclass
class _Prediction:
    t_us: int
    cls: int
    probs: np.ndarray
    t_ready_ns: int


class _Graph:
    """Stage logic; each ``on_*`` handles one message and publishes downstream."""

    def __init__(self, bus: Bus, model: Model, sink: Callable[[DefectMapRecord], None], mel_cfg: MelConfig,
                 sample_rate_hz: int, pose_period_us: int, report: RunReport):
        self.bus, self.model, self.sink, self.mel_cfg = bus, model, sink, mel_cfg
        self.streams = model.stream_names
        self.sync = Synchronizer(sample_rate_hz)
        self.poses = PoseBuffer(pose_period_us)
        self.waiting: Deque[_Prediction] = deque()
        self.report = report
        self.sync_sub = bus.subscribe("audio", "frame")
        self.infer_sub = bus.subscribe("fused")
        self.reg_sub = bus.subscribe("pose", "prediction")

    def _emit_fused(self, samples: Iterable[FusedSample]):
        now = time.perf_counter_ns()
        for s in samples:
            self.bus.publish("fused", TimestampedMsg(s.t_us, "fused", (s, now)))

    def on_sync(self, msg: TimestampedMsg):
        if msg.topic == "audio":
            self._emit_fused(self.sync.push_audio(msg.payload))
        else:
            self._emit_fused(self.sync.push_frame(msg.t_us, msg.payload))

    def finish_sync(self):
        self._emit_fused(self.sync.finish())

    def on_fused(self, msg: TimestampedMsg):
        sample, t_ready = msg.payload
        cls, probs = predict(self.model, sample_features(sample, self.streams, self.mel_cfg))
        self.bus.publish("prediction", TimestampedMsg(sample.t_us, "prediction", _Prediction(sample.t_us, cls, probs, t_ready)))

    def on_reg(self, msg: TimestampedMsg):
        if msg.topic == "pose":
            self.poses.add(msg.t_us, msg.payload)
        else:
            self.waiting.append(msg.payload)
        while self.waiting and self.poses.covers(self.waiting[0].t_us):
            self._register(self.waiting.popleft())

    def finish_reg(self):
        while self.waiting:
            self._register(self.waiting.popleft())

    def _register(self, pred: _Prediction):
        try:
            xyz = self.poses.at(pred.t_us)
        except UnregisteredError:
            self.report.unregistered += 1
            return
        self.sink(_record(pred.t_us, xyz, pred.cls, pred.probs))
        self.report.predicted += 1
        self.report.latencies_ms.append((time.perf_counter_ns() - pred.t_ready_ns) / 1e6)

    def pump(self):
        """Drain all stage queues in pipeline order until nothing moves."""
        moved = True
        while moved:
            moved = False
            for sub, handler in ((self.sync_sub, self.on_sync), (self.infer_sub, self.on_fused),
                                 (self.reg_sub, self.on_reg)):
                for msg in sub.drain():
                    handler(msg)
                    moved = True


def _run_sequential(source, bus: Bus, graph: _Graph):
    for msg in source:
        bus.publish(msg.topic, msg)
        graph.pump()
    graph.finish_sync()
    graph.pump()
    graph.finish_reg()


def _run_threaded(source, bus: Bus, graph: _Graph, poll_s: float = 0.02):
    errors: List[BaseException] = []
    upstream_done = [threading.Event() for _ in range(4)]

    def worker(idx, body, finish=None, sub=None, handler=None):
        try:
            if body is not None:
                body()
            else:
                while True:
                    msg = sub.get(timeout=poll_s)
                    if msg is not None:
                        handler(msg)
                    elif upstream_done[idx - 1].is_set() and len(sub) == 0:
                        break
                if finish is not None:
                    finish()
        except BaseException as exc:  # surfaced to the caller after join
            errors.append(exc)
            for ev in upstream_done:
                ev.set()
        finally:
            upstream_done[idx].set()

    def produce():
        for msg in source:
            if errors:
                return
            bus.publish(msg.topic, msg)

    threads = [
        threading.Thread(target=worker, args=(0, produce), name="source"),
        threading.Thread(target=worker, args=(1, None, graph.finish_sync, graph.sync_sub, graph.on_sync), name="sync"),
        threading.Thread(target=worker, args=(2, None, None, graph.infer_sub, graph.on_fused), name="inference"),
        threading.Thread(target=worker, args=(3, None, graph.finish_reg, graph.reg_sub, graph.on_reg), name="registration"),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def run_pipeline(source: Iterable[TimestampedMsg], model: Model, sink: Callable[[DefectMapRecord], None],
                 scheduler: str = "sequential", mel_cfg: MelConfig = MelConfig(), sample_rate_hz: int = 44100,
                 pose_period_us: int = 4000, queue_size: int = 1024) -> RunReport:
    """Run the monitoring graph over ``source`` and send every registered prediction to ``sink``."""
    if scheduler not in ("sequential", "threaded"):
        raise ValueError(f"unknown scheduler {scheduler!r}")
    check_model(model, mel_cfg, sample_rate_hz)
    report = RunReport()
    bus = Bus(TOPICS, queue_size)
    graph = _Graph(bus, model, sink, mel_cfg, sample_rate_hz, pose_period_us, report)
    t0 = time.perf_counter()
    if scheduler == "sequential":
        _run_sequential(source, bus, graph)
    else:
        _run_threaded(source, bus, graph)
    bus.close()
    report.wall_time_s = time.perf_counter() - t0
    report.frames = graph.sync.frames
    report.fused = graph.sync.fused
    report.dropped = graph.sync.dropped
    report.queue_drops = bus.dropped
    return report


def offline_defect_map(walls: Sequence[WallData], model: Model, mel_cfg: MelConfig = MelConfig(),
                       pose_period_us: int = 4000) -> List[DefectMapRecord]:
    """Batch path over the same walls: direct window indexing, per-sample prediction, track lookup."""
    check_model(model, mel_cfg)
    out = []
    for wall, off in zip(walls, stream_offsets([w.truth.t_end_us for w in walls])):
        track_t = wall.poses.t_us + off
        for s in offline_fused_samples(wall):
            cls, probs = predict(model, sample_features(s, model.stream_names, mel_cfg))
            t = s.t_us + off
            try:
                xyz = lookup_track(t, track_t, wall.poses.xyz, pose_period_us)
            except UnregisteredError:
                continue
            out.append(_record(t, xyz, cls, probs))
    return out
