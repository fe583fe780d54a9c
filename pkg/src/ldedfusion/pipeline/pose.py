"""Tool-centre-point registration by linear interpolation of the pose stream."""

from __future__ import annotations

import bisect
from typing import List, Sequence, Tuple

import numpy as np

Pose = Tuple[float, float, float]


class UnregisteredError(LookupError):
    """No bracketing poses within tolerance for the requested time."""


def interpolate_pose(t_us: int, t0: int, p0: Sequence[float], t1: int, p1: Sequence[float]) -> Pose:
    """Linear interpolation between two poses. Shared by the online and offline paths."""
    if t_us == t0:
        return tuple(float(v) for v in p0)
    if t_us == t1:
        return tuple(float(v) for v in p1)
    f = (t_us - t0) / (t1 - t0)
    return tuple(float(a) + (float(b) - float(a)) * f for a, b in zip(p0, p1))


def lookup_pose(t_us: int, times: Sequence[int], poses: Sequence[Sequence[float]], period_us: int) -> Pose:
    """Pose at ``t_us`` from sorted pose samples; holds the last pose for at most one period."""
    if len(times) == 0:
        raise UnregisteredError(f"no poses available for t={t_us} us")
    i = bisect.bisect_right(times, t_us)
    if i == 0:
        raise UnregisteredError(f"t={t_us} us precedes the first pose at {times[0]} us")
    if i == len(times):
        if t_us - times[-1] <= period_us:
            return tuple(float(v) for v in poses[-1])
        raise UnregisteredError(f"t={t_us} us is {t_us - times[-1]} us past the last pose")
    return interpolate_pose(t_us, times[i - 1], poses[i - 1], times[i], poses[i])


class PoseBuffer:
    """Bounded history of streamed poses."""

    def __init__(self, period_us: int = 4000, max_len: int = 4096):
        self.period_us = period_us
        self.max_len = max_len
        self._t: List[int] = []
        self._p: List[Pose] = []

    def __len__(self):
        return len(self._t)

    def add(self, t_us: int, xyz) -> None:
        if self._t and t_us < self._t[-1]:
            raise ValueError(f"pose timestamp regression: {t_us} us after {self._t[-1]} us")
        self._t.append(int(t_us))
        self._p.append(tuple(float(v) for v in xyz))
        if len(self._t) > self.max_len:
            drop = len(self._t) - self.max_len
            del self._t[:drop], self._p[:drop]

    @property
    def last_t(self):
        return self._t[-1] if self._t else None

    def covers(self, t_us: int) -> bool:
        """True once a pose at or after ``t_us`` has arrived."""
        return bool(self._t) and self._t[-1] >= t_us

    def at(self, t_us: int) -> Pose:
        return lookup_pose(t_us, self._t, self._p, self.period_us)


def associate_pose(t_us: int, buffer: PoseBuffer) -> Pose:
    return buffer.at(t_us)


def lookup_track(t_us: int, track_t: np.ndarray, track_xyz: np.ndarray, period_us: int) -> Pose:
    """Offline counterpart over a whole pose track held as arrays."""
    i = int(np.searchsorted(track_t, t_us, side="right"))
    lo, hi = max(i - 1, 0), min(i + 1, len(track_t))
    times = [int(v) for v in track_t[lo:hi]]
    poses = [tuple(float(v) for v in row) for row in track_xyz[lo:hi]]
    if i == 0:
        times, poses = [int(track_t[0])] if len(track_t) else [], poses[:1]
    return lookup_pose(t_us, times, poses, period_us)
