"""Parse ATC-format pedestrian logs, resample tracks, clip to a region.

ATC CSV line layout (one tracked sample per line):

    time_ms,person_id,x_mm,y_mm,z_mm,velocity_mm_s,motion_angle_rad,facing_angle_rad

z and the facing angle are parsed but ignored downstream; the trailing
facing field may be absent. Units are converted on ingest (ms -> s,
mm -> m, mm/s -> m/s). Speed and heading are *recomputed* from the
resampled positions by finite differences rather than trusted from the
file, which keeps them kinematically consistent with the line-of-sight
computation later in the pipeline.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_RESAMPLE_PERIOD = 0.1  # seconds, matches the simulation time step
GAP_FACTOR = 2.0  # gaps longer than GAP_FACTOR * period split a track

PIPELINE_CONFIG_SCHEMA = "socialzone.pipeline-config/1"

__all__ = [
    "TrajectorySample",
    "Track",
    "RegionOfInterest",
    "ParseReport",
    "ParseError",
    "PipelineConfig",
    "parse_atc_csv",
    "write_atc_csv",
    "build_tracks",
    "clip_to_region",
]


class ParseError(ValueError):
    """Raised in strict mode when a line cannot be parsed."""


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """One timestamped pedestrian state in world coordinates (SI units)."""

    time: float
    person_id: int
    position: np.ndarray
    speed: float
    motion_angle: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(2))


@dataclass(eq=False)
class Track:
    """One person's samples on a uniform time grid.

    Stored columnar for speed; ``sample(i)`` and ``samples`` provide the
    per-sample view. Consecutive times differ by exactly the period.
    """

    person_id: int
    times: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    motion_angles: np.ndarray
    period: float

    def __post_init__(self):
        self.times = np.asarray(self.times, float).reshape(-1)
        self.positions = np.asarray(self.positions, float).reshape(-1, 2)
        self.speeds = np.asarray(self.speeds, float).reshape(-1)
        self.motion_angles = np.asarray(self.motion_angles, float).reshape(-1)
        n = len(self.times)
        if not (len(self.positions) == len(self.speeds) == len(self.motion_angles) == n):
            raise ValueError("track columns must share one length")
        if n >= 2:
            steps = np.diff(self.times)
            if not np.allclose(steps, self.period, rtol=0, atol=1e-9):
                raise ValueError("track samples must sit on a uniform grid")

    def __len__(self) -> int:
        return len(self.times)

    def sample(self, i: int) -> TrajectorySample:
        return TrajectorySample(
            time=float(self.times[i]),
            person_id=self.person_id,
            position=self.positions[i].copy(),
            speed=float(self.speeds[i]),
            motion_angle=float(self.motion_angles[i]),
        )

    @property
    def samples(self) -> list[TrajectorySample]:
        return [self.sample(i) for i in range(len(self))]


@dataclass(frozen=True)
class RegionOfInterest:
    """Axis-aligned rectangle in world meters."""

    min_corner: tuple[float, float]
    max_corner: tuple[float, float]

    def __post_init__(self):
        lo = (float(self.min_corner[0]), float(self.min_corner[1]))
        hi = (float(self.max_corner[0]), float(self.max_corner[1]))
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise ValueError("min_corner must be strictly below max_corner")

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, float)
        lo = np.asarray(self.min_corner)
        hi = np.asarray(self.max_corner)
        return np.all((p >= lo) & (p <= hi), axis=-1)


@dataclass
class ParseReport:
    """Per-file accounting of parsed and skipped lines."""

    parsed: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)

    @property
    def skipped_count(self) -> int:
        return len(self.skipped)


def _open_lines(stream):
    if isinstance(stream, (str, Path)):
        return open(stream, encoding="utf-8"), True
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8")), False
    return stream, False


def parse_atc_csv(stream, strict: bool = False) -> tuple[list[TrajectorySample], ParseReport]:
    """Parse ATC CSV lines into samples, unit-converted.

    ``stream`` may be a path, bytes, or an iterable of text lines.
    Malformed lines are recorded in the report and skipped; with
    ``strict=True`` the first malformed line raises ParseError. An empty
    stream yields an empty list, not an error.
    """
    fh, owns = _open_lines(stream)
    samples: list[TrajectorySample] = []
    report = ParseReport()
    try:
        for line_no, raw in enumerate(fh, start=1):
            if isinstance(raw, bytes):
                raw = raw.decode("utf-8")
            line = raw.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) < 7:
                _record_skip(report, line_no, "fewer than 7 fields", strict)
                continue
            try:
                time_ms = float(fields[0])
                person_id = int(float(fields[1]))
                x_mm, y_mm = float(fields[2]), float(fields[3])
                float(fields[4])  # z, validated but unused
                v_mm_s = float(fields[5])
                angle = float(fields[6])
            except ValueError:
                _record_skip(report, line_no, "non-numeric field", strict)
                continue
            samples.append(
                TrajectorySample(
                    time=time_ms / 1000.0,
                    person_id=person_id,
                    position=np.array([x_mm / 1000.0, y_mm / 1000.0]),
                    speed=abs(v_mm_s) / 1000.0,
                    motion_angle=wrap_angle(angle),
                )
            )
            report.parsed += 1
    finally:
        if owns:
            fh.close()
    return samples, report


def _record_skip(report: ParseReport, line_no: int, reason: str, strict: bool):
    if strict:
        raise ParseError(f"line {line_no}: {reason}")
    report.skipped.append((line_no, reason))
    logger.debug("skipping line %d: %s", line_no, reason)


def write_atc_csv(tracks, path) -> None:
    """Write tracks back out in ATC CSV units (ms / mm, integer-rounded).

    Rounding to the source quantum keeps a parse round-trip within 1 mm.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for track in tracks:
            for i in range(len(track)):
                t_ms = round(track.times[i] * 1000.0)
                x_mm = round(track.positions[i, 0] * 1000.0)
                y_mm = round(track.positions[i, 1] * 1000.0)
                v_mm = round(track.speeds[i] * 1000.0)
                fh.write(
                    f"{t_ms},{track.person_id},{x_mm},{y_mm},0,{v_mm},"
                    f"{track.motion_angles[i]:.9f},0.0\n"
                )


def exclude_time_intervals(samples, intervals_ms) -> list[TrajectorySample]:
    """Drop samples whose timestamp falls inside any [start_ms, end_ms]."""
    if not intervals_ms:
        return list(samples)
    spans = [(lo / 1000.0, hi / 1000.0) for lo, hi in intervals_ms]
    return [s for s in samples if not any(lo <= s.time <= hi for lo, hi in spans)]


def build_tracks(samples, period: float = DEFAULT_RESAMPLE_PERIOD) -> list[Track]:
    """Group samples by person, resample onto a shared uniform grid.

    The grid is global (integer multiples of the period), so samples of
    different people align in time. Gaps longer than twice the period
    split a person's data into separate tracks; speed and heading are
    recomputed from the interpolated positions by finite differences.
    Groups that cover fewer than two grid points yield no track.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    by_person: dict[int, list[TrajectorySample]] = {}
    for s in samples:
        by_person.setdefault(s.person_id, []).append(s)
    tracks: list[Track] = []
    for pid in sorted(by_person):
        group = sorted(by_person[pid], key=lambda s: s.time)
        times = np.array([s.time for s in group])
        pos = np.array([s.position for s in group])
        keep = np.concatenate([[True], np.diff(times) > 1e-12])
        times, pos = times[keep], pos[keep]
        if len(times) < 2:
            continue
        gap_breaks = np.nonzero(np.diff(times) > GAP_FACTOR * period + 1e-12)[0]
        start = 0
        for stop in list(gap_breaks + 1) + [len(times)]:
            track = _resample_segment(pid, times[start:stop], pos[start:stop], period)
            if track is not None:
                tracks.append(track)
            start = stop
    return tracks


def _resample_segment(pid, times, pos, period) -> Track | None:
    if len(times) < 2:
        return None
    k_first = math.ceil(round(times[0] / period, 9))
    k_last = math.floor(round(times[-1] / period, 9))
    if k_last - k_first < 1:
        return None
    grid = np.arange(k_first, k_last + 1) * period
    gx = np.interp(grid, times, pos[:, 0])
    gy = np.interp(grid, times, pos[:, 1])
    positions = np.stack([gx, gy], axis=1)
    vel = np.gradient(positions, period, axis=0)
    speeds = np.linalg.norm(vel, axis=1)
    angles = wrap_angle(np.arctan2(vel[:, 1], vel[:, 0]))
    return Track(
        person_id=pid,
        times=grid,
        positions=positions,
        speeds=speeds,
        motion_angles=angles,
        period=period,
    )


def clip_to_region(tracks, roi: RegionOfInterest) -> list[Track]:
    """Keep only in-region samples; each maximal in-region run becomes a track."""
    clipped: list[Track] = []
    for track in tracks:
        inside = roi.contains(track.positions)
        if inside.all():
            clipped.append(track)
            continue
        idx = np.nonzero(inside)[0]
        if idx.size == 0:
            continue
        splits = np.nonzero(np.diff(idx) > 1)[0]
        for run in np.split(idx, splits + 1):
            if len(run) < 2:
                continue
            clipped.append(
                Track(
                    person_id=track.person_id,
                    times=track.times[run],
                    positions=track.positions[run],
                    speeds=track.speeds[run],
                    motion_angles=track.motion_angles[run],
                    period=track.period,
                )
            )
    return clipped


@dataclass
class PipelineConfig:
    """Knobs for the learn pipeline, loadable from a JSON config file.

    File keys: resample_period_s, roi.min, roi.max, exclude_intervals
    (list of [start_ms, end_ms]), attentional_width_m,
    attentional_depth_m, window_s, min_init_dist_m, min_speed_m_s,
    speeds, lof_k, outlier_fraction, r_max_m.
    """

    resample_period_s: float = DEFAULT_RESAMPLE_PERIOD
    roi: RegionOfInterest | None = None
    exclude_intervals: list = field(default_factory=list)
    attentional_width_m: float = 4.0
    attentional_depth_m: float = 5.0
    window_s: float = 3.0
    min_init_dist_m: float = 1.0
    min_speed_m_s: float = 0.4
    speeds: tuple = tuple(round(0.4 + 0.2 * i, 1) for i in range(7))
    lof_k: int = 20
    outlier_fraction: float = 0.002
    r_max_m: float = 2.0

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if raw.get("schema", PIPELINE_CONFIG_SCHEMA) != PIPELINE_CONFIG_SCHEMA:
            raise ValueError(f"{path}: not a {PIPELINE_CONFIG_SCHEMA} file")
        cfg = cls()
        if "resample_period_s" in raw:
            cfg.resample_period_s = float(raw["resample_period_s"])
        if "roi" in raw and raw["roi"] is not None:
            cfg.roi = RegionOfInterest(tuple(raw["roi"]["min"]), tuple(raw["roi"]["max"]))
        cfg.exclude_intervals = [list(map(float, iv)) for iv in raw.get("exclude_intervals", [])]
        for key in (
            "attentional_width_m", "attentional_depth_m", "window_s",
            "min_init_dist_m", "min_speed_m_s", "outlier_fraction", "r_max_m",
        ):
            if key in raw:
                setattr(cfg, key, float(raw[key]))
        if "speeds" in raw:
            cfg.speeds = tuple(float(s) for s in raw["speeds"])
        if "lof_k" in raw:
            cfg.lof_k = int(raw["lof_k"])
        return cfg
