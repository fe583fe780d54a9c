"""Replay of recorded walls as one timestamp-ordered message stream.

Walls are concatenated on a single timeline: each wall is shifted by the end
of the previous one (rounded up to the frame grid) plus one second of silence,
so timestamps never regress across wall boundaries.
"""

from __future__ import annotations

import heapq
from pathlib import Path
from typing import Iterable, Iterator, List, Sequence

import numpy as np

from ..dataset import load_manifest, load_wall
from ..dsp import AudioChunk
from ..sim import FRAME_PERIOD_US, WallData
from .bus import TimestampedMsg

WALL_GAP_US = 1_000_000
# ties at equal timestamps: poses first, then audio, then frames
TOPIC_RANK = {"pose": 0, "audio": 1, "frame": 2}


def stream_offsets(t_ends_us: Sequence[int]) -> List[int]:
    out, off = [], 0
    for t_end in t_ends_us:
        out.append(off)
        off += -(-int(t_end) // FRAME_PERIOD_US) * FRAME_PERIOD_US + WALL_GAP_US
    return out


def _audio_msgs(wall: WallData, off: int, chunk_us: int):
    sr = wall.sample_rate_hz
    n = chunk_us * sr // 1_000_000
    for t0, samples in wall.audio:
        for k, a in enumerate(range(0, len(samples), n)):
            t = off + t0 + k * chunk_us
            yield TimestampedMsg(t, "audio", AudioChunk(samples[a:a + n], sr, t))


def _frame_msgs(wall: WallData, off: int):
    for t, frame in zip(wall.frame_times, wall.frames):
        yield TimestampedMsg(off + int(t), "frame", frame)


def _pose_msgs(wall: WallData, off: int):
    for t, xyz in zip(wall.poses.t_us, wall.poses.xyz):
        yield TimestampedMsg(off + int(t), "pose", tuple(float(v) for v in xyz))


def wall_messages(wall: WallData, t_offset_us: int = 0, chunk_us: int = FRAME_PERIOD_US) -> Iterator[TimestampedMsg]:
    """Audio in ``chunk_us`` pieces, frames and poses, merged by (timestamp, topic rank)."""
    return heapq.merge(_audio_msgs(wall, t_offset_us, chunk_us), _frame_msgs(wall, t_offset_us),
                       _pose_msgs(wall, t_offset_us), key=lambda m: (m.t_us, TOPIC_RANK[m.topic]))


def walls_messages(walls: Sequence[WallData]) -> Iterator[TimestampedMsg]:
    for wall, off in zip(walls, stream_offsets([w.truth.t_end_us for w in walls])):
        yield from wall_messages(wall, off)


def dataset_messages(root) -> Iterator[TimestampedMsg]:
    """Stream a dataset directory one wall at a time."""
    manifest = load_manifest(root)
    metas = manifest["walls"]
    for meta, off in zip(metas, stream_offsets([m["t_end_us"] for m in metas])):
        yield from wall_messages(load_wall(root, meta), off)


def dataset_pose_period_us(root) -> int:
    return 1_000_000 // int(load_manifest(root).get("pose_rate_hz", 250))
