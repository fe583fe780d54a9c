"""Pairs 10 Hz frames with the 100 ms of audio ending at each frame timestamp.

All time arithmetic is in integer microseconds.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Optional, Tuple

import numpy as np

from ..dataset import WINDOW_US, FusedSample, frame_to_image, window_indices
from ..dsp import AudioChunk


class StreamError(RuntimeError):
    pass


@dataclass
class _Segment:
    """A gap-free run of audio; chunk list plus the index of its first retained sample."""

    t0_us: int
    chunks: List[np.ndarray] = field(default_factory=list)
    offsets: List[int] = field(default_factory=list)
    n: int = 0

    def append(self, x: np.ndarray):
        self.offsets.append(self.n)
        self.chunks.append(x)
        self.n += len(x)

    def extract(self, a: int, b: int) -> np.ndarray:
        parts = []
        for off, x in zip(self.offsets, self.chunks):
            lo, hi = max(a, off), min(b, off + len(x))
            if lo < hi:
                parts.append(x[lo - off:hi - off])
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def trim_before(self, a: int):
        while self.chunks and self.offsets[0] + len(self.chunks[0]) <= a:
            self.chunks.pop(0)
            self.offsets.pop(0)


class Synchronizer:
    """Emits exactly one FusedSample per frame whose audio window can be filled.

    Frames wait while their window is still arriving; a frame whose window
    starts before the audio segment that should cover it (an audio gap) is
    dropped and counted.
    """

    def __init__(self, sample_rate_hz: int = 44100, window_us: int = WINDOW_US,
                 frame_transform: Callable[[np.ndarray], np.ndarray] = frame_to_image):
        self.sr = sample_rate_hz
        self.window_us = window_us
        self.window_len = window_us * sample_rate_hz // 1_000_000
        self.frame_transform = frame_transform
        self._segments: List[_Segment] = []
        self._pending: Deque[Tuple[int, np.ndarray]] = deque()
        self._last_chunk_t: Optional[int] = None
        self.frames = 0
        self.fused = 0
        self.dropped = 0

    def _expected_next(self, seg: _Segment) -> int:
        return seg.t0_us + seg.n * 1_000_000 // self.sr

    def push_audio(self, chunk: AudioChunk) -> List[FusedSample]:
        if chunk.sample_rate_hz != self.sr:
            raise StreamError(f"audio at {chunk.sample_rate_hz} Hz, synchronizer expects {self.sr} Hz")
        t = int(chunk.t_start_us)
        if self._last_chunk_t is not None and t < self._last_chunk_t:
            raise StreamError(f"audio timestamp regression: {t} us after {self._last_chunk_t} us")
        tol = 1_000_000 // (2 * self.sr)
        seg = self._segments[-1] if self._segments else None
        if seg is not None:
            expected = self._expected_next(seg)
            if t < expected - tol:
                raise StreamError(f"audio chunk at {t} us overlaps data up to {expected} us")
            if t > expected + tol:
                seg = None  # gap: start a new segment
        if seg is None:
            seg = _Segment(t)
            self._segments.append(seg)
        seg.append(np.asarray(chunk.samples))
        self._last_chunk_t = t
        return self._resolve()

    def push_frame(self, t_us: int, frame: np.ndarray) -> List[FusedSample]:
        self.frames += 1
        self._pending.append((int(t_us), frame))
        return self._resolve()

    def _resolve(self) -> List[FusedSample]:
        out = []
        while self._pending:
            t, frame = self._pending[0]
            start_t = t - self.window_us
            seg_i = None
            for i in range(len(self._segments) - 1, -1, -1):
                if self._segments[i].t0_us <= start_t:
                    seg_i = i
                    break
            if seg_i is None:
                if not self._segments:
                    break  # no audio yet
                self._pending.popleft()
                self.dropped += 1  # audio starts after this window begins
                continue
            seg = self._segments[seg_i]
            a, b = window_indices(t, seg.t0_us, self.sr, self.window_us)
            if b <= seg.n:
                self._pending.popleft()
                samples = seg.extract(a, b)
                out.append(FusedSample(t, AudioChunk(samples, self.sr, start_t), self.frame_transform(frame)))
                self.fused += 1
                seg.trim_before(a)
                del self._segments[:seg_i]
                continue
            if seg_i < len(self._segments) - 1:
                self._pending.popleft()
                self.dropped += 1  # window runs into an audio gap
                continue
            break  # window still filling
        return out

    def finish(self) -> List[FusedSample]:
        """End of stream: frames still waiting can never complete."""
        out = self._resolve()
        self.dropped += len(self._pending)
        self._pending.clear()
        return out
