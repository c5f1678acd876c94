"""Extract two-person encounter records from resampled tracks.

A record is one (LOS angle, distance, reference speed) triple taken at
one time step of a qualifying encounter window. Windows are found per
ordered (reference, other) pair: the heading-aligned attentional
rectangle must stay inside the region of interest, exactly one other
pedestrian may occupy it, that pedestrian starts at least the minimum
initial distance away, and the reference keeps a minimum walking speed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle
from .ingest import RegionOfInterest, Track, TrajectorySample

logger = logging.getLogger(__name__)

__all__ = [
    "AttentionalSpace",
    "InteractionRecord",
    "los_of",
    "extract_interactions",
    "write_records_csv",
    "read_records_csv",
]


@dataclass(frozen=True)
class AttentionalSpace:
    """Heading-aligned rectangle: depth ahead, width/2 to each side."""

    width: float = 4.0
    depth: float = 5.0

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise ValueError("attentional space needs positive width and depth")


@dataclass(frozen=True)
class InteractionRecord:
    """Bearing, distance and reference speed at one encounter step."""

    los_angle: float
    distance: float
    ref_speed: float


def los_of(ref: TrajectorySample, other: TrajectorySample) -> tuple[float, float]:
    """LOS bearing of ``other`` in the reference heading frame, and distance.

    Coincident positions give (0.0, 0.0) by convention; such pairs are
    excluded upstream by the minimum initial distance rule.
    """
    delta = other.position - ref.position
    distance = float(np.hypot(delta[0], delta[1]))
    if distance == 0.0:
        logger.debug("coincident samples for ids %d/%d", ref.person_id, other.person_id)
        return 0.0, 0.0
    angle = wrap_angle(np.arctan2(delta[1], delta[0]) - ref.motion_angle)
    return angle, distance


def extract_interactions(
    tracks: list[Track],
    roi: RegionOfInterest,
    space: AttentionalSpace = AttentionalSpace(),
    window: float = 3.0,
    min_init_dist: float = 1.0,
    min_speed: float = 0.4,
) -> list[InteractionRecord]:
    """Harvest records from every qualifying encounter.

    An encounter qualifies when, for at least ``window`` seconds, the
    attentional rectangle stays inside the ROI, exactly one other
    pedestrian occupies it, that pedestrian starts at least
    ``min_init_dist`` away, and the reference keeps ``min_speed``.
    Records are then emitted for the full co-presence of that pair:
    every contiguous step around the qualifying window where the pair
    remains alone within observation range and the ROI/speed conditions
    hold. Bearings behind the reference therefore appear once the pair
    has passed; without them the minimum-distance boundary would only
    ever be observed ahead.

    Tracks must share one uniform grid (see ingest.build_tracks). Each
    ordered pair is processed independently, so a single passing yields
    records for both participants as reference.
    """
    if not tracks:
        return []
    period = tracks[0].period
    indexed = [(t, np.rint(t.times / period).astype(np.int64)) for t in tracks]
    records: list[InteractionRecord] = []
    for ref, ref_idx in indexed:
        records.extend(
            _records_for_reference(
                ref, ref_idx, indexed, roi, space, window, min_init_dist, min_speed, period
            )
        )
    return records


def _records_for_reference(
    ref, ref_idx, indexed, roi, space, window, min_init_dist, min_speed, period
):
    n = len(ref)
    cos_h = np.cos(ref.motion_angles)
    sin_h = np.sin(ref.motion_angles)
    # Observation disk that circumscribes the rectangle; the emission run
    # may extend to it once the encounter qualifies.
    obs_radius = float(np.hypot(space.depth, 0.5 * space.width))

    # The whole attentional rectangle must stay inside the ROI, checked
    # on its four corners.
    half_w = 0.5 * space.width
    corners_body = np.array([
        [0.0, -half_w], [0.0, half_w], [space.depth, -half_w], [space.depth, half_w]
    ])
    ok = np.ones(n, dtype=bool)
    for bx, by in corners_body:
        cx = ref.positions[:, 0] + cos_h * bx - sin_h * by
        cy = ref.positions[:, 1] + sin_h * bx + cos_h * by
        ok &= roi.contains(np.stack([cx, cy], axis=1))
    ok &= ref.speeds >= min_speed

    # Rectangle and observation-disk occupancy per step, per other track.
    inside_count = np.zeros(n, dtype=np.int64)
    near_count = np.zeros(n, dtype=np.int64)
    per_other: list[tuple[Track, np.ndarray, np.ndarray, int, int]] = []
    for other, other_idx in indexed:
        if other is ref:
            continue
        lo = max(ref_idx[0], other_idx[0])
        hi = min(ref_idx[-1], other_idx[-1])
        if lo > hi:
            continue
        ri = lo - ref_idx[0]
        oi = lo - other_idx[0]
        m = hi - lo + 1
        rel = other.positions[oi:oi + m] - ref.positions[ri:ri + m]
        fwd = cos_h[ri:ri + m] * rel[:, 0] + sin_h[ri:ri + m] * rel[:, 1]
        lat = -sin_h[ri:ri + m] * rel[:, 0] + cos_h[ri:ri + m] * rel[:, 1]
        dist = np.hypot(rel[:, 0], rel[:, 1])
        inside = (fwd >= 0.0) & (fwd <= space.depth) & (np.abs(lat) <= half_w)
        near = dist <= obs_radius
        if not near.any():
            continue
        inside_count[ri:ri + m] += inside
        near_count[ri:ri + m] += near
        per_other.append((other, inside, near, ri, oi))

    min_steps = int(round(window / period)) + 1
    for other, inside, near, ri, oi in per_other:
        m = len(inside)
        ok_here = ok[ri:ri + m]
        anchor = inside & (inside_count[ri:ri + m] == 1) & ok_here
        emit_ok = near & (near_count[ri:ri + m] == 1) & ok_here
        emitted: list[tuple[int, int]] = []
        for run_start, run_stop in _true_runs(anchor):
            if run_stop - run_start < min_steps:
                continue
            rel0 = other.positions[oi + run_start] - ref.positions[ri + run_start]
            if np.hypot(rel0[0], rel0[1]) < min_init_dist:
                continue
            lo_e = run_start
            while lo_e > 0 and emit_ok[lo_e - 1]:
                lo_e -= 1
            hi_e = run_stop
            while hi_e < m and emit_ok[hi_e]:
                hi_e += 1
            if emitted and lo_e <= emitted[-1][1]:
                emitted[-1] = (emitted[-1][0], max(emitted[-1][1], hi_e))
            else:
                emitted.append((lo_e, hi_e))
        for lo_e, hi_e in emitted:
            r0 = ri + lo_e
            o0 = oi + lo_e
            count = hi_e - lo_e
            rel = other.positions[o0:o0 + count] - ref.positions[r0:r0 + count]
            dist = np.hypot(rel[:, 0], rel[:, 1])
            los = wrap_angle(
                np.arctan2(rel[:, 1], rel[:, 0]) - ref.motion_angles[r0:r0 + count]
            )
            speeds = ref.speeds[r0:r0 + count]
            yield from (
                InteractionRecord(float(a), float(d), float(s))
                for a, d, s in zip(los, dist, speeds)
            )


def _true_runs(mask: np.ndarray):
    """Yield (start, stop) of maximal True runs in a boolean array."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.nonzero(np.diff(padded.astype(np.int8)))[0]
    return zip(edges[::2], edges[1::2])


def write_records_csv(records, path) -> None:
    """Dump records as `los_angle_rad,distance_m,ref_speed_m_s` lines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["los_angle_rad", "distance_m", "ref_speed_m_s"])
        for r in records:
            writer.writerow([f"{r.los_angle:.9g}", f"{r.distance:.9g}", f"{r.ref_speed:.9g}"])


def read_records_csv(path) -> list[InteractionRecord]:
    records: list[InteractionRecord] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header[:1] and not _is_float(header[0]):
            pass  # header row consumed
        elif header is not None:
            records.append(InteractionRecord(*map(float, header[:3])))
        for row in reader:
            if row:
                records.append(InteractionRecord(*map(float, row[:3])))
    return records


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True
