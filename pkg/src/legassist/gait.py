"""Two-leg tracking and stride estimation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import find_peaks, savgol_filter

from .blobs import LegObservation
from .errors import InsufficientDataError

V_MAX = 3.0  # m/s, fastest plausible foot
MAX_GAP = 0.5  # s, longer dropouts start a new track segment
STANCE_SPEED = 0.1  # m/s
STANCE_SPACING = 0.2  # s
SWING_SPEED = 0.25  # m/s, a foot must exceed this between two stances


@dataclass
class LegTrack:
    """Time series of one foot. ``segments[i]`` increments after each long gap."""

    times: list[float] = field(default_factory=list)
    points: list[tuple[float, float, float]] = field(default_factory=list)
    segments: list[int] = field(default_factory=list)

    def append(self, t: float, p, segment: int) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("track timestamps must be strictly increasing")
        self.times.append(float(t))
        self.points.append((float(p[0]), float(p[1]), float(p[2])))
        self.segments.append(segment)

    def __len__(self) -> int:
        return len(self.times)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.asarray(self.times), np.asarray(self.points).reshape(-1, 3),
                np.asarray(self.segments, dtype=int))


def track_legs(observations: Iterable[LegObservation], *, v_max: float = V_MAX,
               max_gap: float = MAX_GAP) -> tuple[LegTrack, LegTrack]:
    """Associate per-frame leg pairs into two continuous foot tracks.

    Each frame either keeps the previous identity assignment or swaps it,
    whichever moves the two track heads the least in total. Observations that
    would need a foot faster than ``v_max`` are dropped as outliers.
    """
    a, b = LegTrack(), LegTrack()
    segment = -1
    last_t = None
    prev_t = None
    for obs in observations:
        if prev_t is not None and obs.timestamp <= prev_t:
            raise ValueError("observation timestamps must be increasing")
        prev_t = obs.timestamp
        if not obs.valid:
            continue
        p, q = np.asarray(obs.left, float), np.asarray(obs.right, float)
        if last_t is None or obs.timestamp - last_t > max_gap:
            segment += 1
            a.append(obs.timestamp, p, segment)
            b.append(obs.timestamp, q, segment)
            last_t = obs.timestamp
            continue
        ha, hb = np.asarray(a.points[-1]), np.asarray(b.points[-1])
        keep = np.linalg.norm(p - ha) + np.linalg.norm(q - hb)
        swap = np.linalg.norm(p - hb) + np.linalg.norm(q - ha)
        if swap < keep:
            p, q = q, p
        reach = v_max * (obs.timestamp - last_t)
        if np.linalg.norm(p - ha) > reach or np.linalg.norm(q - hb) > reach:
            continue
        a.append(obs.timestamp, p, segment)
        b.append(obs.timestamp, q, segment)
        last_t = obs.timestamp
    return a, b


@dataclass(frozen=True)
class GaitReport:
    stride_length: float
    stride_duration: float
    stride_velocity: float
    direction: float
    cadence: float
    n_strides: int = 0

    def velocity_vector(self) -> np.ndarray:
        return self.stride_velocity * np.array([math.cos(self.direction), math.sin(self.direction)])

    def to_json(self) -> dict:
        return asdict(self)


def _smooth(t: np.ndarray, xy: np.ndarray) -> np.ndarray:
    if len(t) < 5:
        return xy
    return savgol_filter(xy, 5, 2, axis=0)


def stance_events(t: np.ndarray, xy: np.ndarray, *, stance_speed: float = STANCE_SPEED,
                  min_spacing: float = STANCE_SPACING,
                  swing_speed: float = SWING_SPEED) -> tuple[np.ndarray, np.ndarray]:
    """Indices of stance events and the smoothed positions of one track segment.

    A stance is a local minimum of foot speed below ``stance_speed``; two
    stances must be separated by a swing (speed above ``swing_speed``),
    otherwise only the slower one is kept.
    """
    if len(t) < 3:
        return np.array([], dtype=int), xy
    pos = _smooth(t, xy)
    vel = np.gradient(pos, t, axis=0)
    speed = np.linalg.norm(vel, axis=1)
    dt = float(np.median(np.diff(t)))
    distance = max(1, int(round(min_spacing / dt)))
    minima, _ = find_peaks(-speed, distance=distance)
    cand = [int(i) for i in minima if speed[i] < stance_speed]
    events: list[int] = []
    for i in cand:
        if events and speed[events[-1]:i + 1].max() <= swing_speed:
            if speed[i] < speed[events[-1]]:
                events[-1] = i
            continue
        events.append(i)
    return np.asarray(events, dtype=int), pos


def _strides(track: LegTrack) -> list[tuple[float, float]]:
    """(length, duration) of each stride of one foot, never spanning a segment break."""
    t, p, seg = track.arrays()
    out = []
    for s in np.unique(seg):
        sel = seg == s
        ts, xy = t[sel], p[sel, :2]
        ev, pos = stance_events(ts, xy)
        for i, j in zip(ev[:-1], ev[1:]):
            out.append((float(np.linalg.norm(pos[j] - pos[i])), float(ts[j] - ts[i])))
    return out


def walking_direction(a: LegTrack, b: LegTrack) -> float:
    """Principal direction of the leg-midpoint path, oriented along net travel."""
    ta, pa, _ = a.arrays()
    tb, pb, _ = b.arrays()
    common, ia, ib = np.intersect1d(ta, tb, return_indices=True)
    if len(common) < 2:
        raise InsufficientDataError("need at least two common frames for a direction")
    mid = (pa[ia, :2] + pb[ib, :2]) / 2.0
    centred = mid - mid.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axis = vt[0]
    if axis @ (mid[-1] - mid[0]) < 0:
        axis = -axis
    return math.atan2(axis[1], axis[0])


def estimate_gait(tracks: Sequence[LegTrack]) -> GaitReport:
    """Stride length, duration, velocity, cadence and heading from two foot tracks."""
    strides = [s for tr in tracks for s in _strides(tr)]
    if len(strides) < 2:
        raise InsufficientDataError(f"found {len(strides)} strides, need at least 2")
    length = float(np.mean([s[0] for s in strides]))
    duration = float(np.mean([s[1] for s in strides]))
    return GaitReport(length, duration, length / duration, walking_direction(*tracks),
                      1.0 / duration, len(strides))
