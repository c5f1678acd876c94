import io

import numpy as np
import pytest

from socialzone.ingest import (
    ParseError,
    RegionOfInterest,
    Track,
    build_tracks,
    clip_to_region,
    exclude_time_intervals,
    parse_atc_csv,
    write_atc_csv,
)


def make_samples(rows):
    """rows: (time_ms, id, x_mm, y_mm) tuples -> ATC lines."""
    text = "".join(f"{t},{i},{x},{y},0,500,0.0,0.0\n" for t, i, x, y in rows)
    return io.StringIO(text)


class TestParse:
    def test_unit_conversion(self):
        samples, report = parse_atc_csv(io.StringIO("1000,42,2000,3000,0,500,0.0,0.0\n"))
        assert report.parsed == 1 and not report.skipped
        s = samples[0]
        assert s.time == pytest.approx(1.0)
        assert s.person_id == 42
        assert s.position == pytest.approx([2.0, 3.0])
        assert s.speed == pytest.approx(0.5)
        assert s.motion_angle == pytest.approx(0.0)

    def test_bad_line_reported(self):
        stream = io.StringIO("1000,42,2000,3000,0,oops,0.0,0.0\n2000,42,2100,3000,0,500,0.0,0.0\n")
        samples, report = parse_atc_csv(stream)
        assert len(samples) == 1
        assert report.skipped_count == 1
        assert report.skipped[0][0] == 1

    def test_strict_mode_raises(self):
        with pytest.raises(ParseError):
            parse_atc_csv(io.StringIO("1,2,3\n"), strict=True)

    def test_empty_stream(self):
        samples, report = parse_atc_csv(io.StringIO(""))
        assert samples == [] and report.parsed == 0

    def test_three_lines_two_ids(self):
        stream = make_samples([(0, 1, 0, 0), (100, 1, 100, 0), (0, 2, 5000, 0)])
        samples, _ = parse_atc_csv(stream)
        assert len(samples) == 3
        assert sorted({s.person_id for s in samples}) == [1, 2]

    def test_seven_field_line_accepted(self):
        samples, report = parse_atc_csv(io.StringIO("0,1,0,0,0,400,1.0\n"))
        assert len(samples) == 1 and report.skipped_count == 0


class TestBuildTracks:
    def test_constant_velocity(self):
        rows = [(0, 1, 0, 0), (500, 1, 500, 0), (1000, 1, 1000, 0)]
        samples, _ = parse_atc_csv(make_samples(rows))
        tracks = build_tracks(samples, period=0.5)
        assert len(tracks) == 1
        t = tracks[0]
        assert len(t) == 3
        assert np.allclose(t.speeds, 1.0, atol=1e-9)
        assert np.allclose(t.motion_angles, 0.0, atol=1e-9)

    def test_gap_splits_track(self):
        rows = [(0, 1, 0, 0), (500, 1, 500, 0), (3000, 1, 3000, 0), (3500, 1, 3500, 0)]
        samples, _ = parse_atc_csv(make_samples(rows))
        tracks = build_tracks(samples, period=0.5)
        assert len(tracks) == 2

    def test_circular_walker_speed(self):
        t = np.arange(0, 10, 0.1)
        samples, _ = parse_atc_csv(io.StringIO("".join(
            f"{round(ti*1000)},7,{round(np.cos(ti)*1000)},{round(np.sin(ti)*1000)},0,1000,0,0\n"
            for ti in t
        )))
        tracks = build_tracks(samples, period=0.1)
        assert len(tracks) == 1
        # radius 1 m at 1 rad/s: recomputed speed within 1 percent
        assert np.abs(tracks[0].speeds - 1.0).max() < 0.01

    def test_single_sample_no_track(self):
        samples, _ = parse_atc_csv(make_samples([(0, 1, 0, 0)]))
        assert build_tracks(samples, period=0.1) == []

    def test_on_grid_resample_is_identity(self):
        rows = [(i * 100, 3, i * 123, i * 77) for i in range(20)]
        samples, _ = parse_atc_csv(make_samples(rows))
        tracks = build_tracks(samples, period=0.1)
        assert len(tracks) == 1
        expected = np.array([[i * 0.123, i * 0.077] for i in range(20)])
        assert np.allclose(tracks[0].positions, expected, atol=1e-12)

    def test_shared_global_grid(self):
        rows = [(50, 1, 0, 0), (1050, 1, 1000, 0), (250, 2, 0, 0), (1250, 2, 0, 1000)]
        samples, _ = parse_atc_csv(make_samples(rows))
        tracks = build_tracks(samples, period=0.1)
        for tr in tracks:
            offsets = np.rint(tr.times / 0.1) * 0.1
            assert np.allclose(offsets, tr.times, atol=1e-9)

    def test_period_validation(self):
        with pytest.raises(ValueError):
            build_tracks([], period=0.0)


class TestClipToRegion:
    def roi(self):
        return RegionOfInterest((0.0, 0.0), (10.0, 10.0))

    def track_through(self, ys):
        n = len(ys)
        times = np.arange(n) * 0.1
        pos = np.stack([np.linspace(1, 9, n), np.asarray(ys, float)], axis=1)
        return Track(1, times, pos, np.ones(n), np.zeros(n), 0.1)

    def test_fully_inside_unchanged(self):
        tr = self.track_through([5.0] * 10)
        out = clip_to_region([tr], self.roi())
        assert len(out) == 1 and out[0] is tr

    def test_boundary_crossing_truncates(self):
        ys = [5.0] * 5 + [20.0] * 5
        out = clip_to_region([self.track_through(ys)], self.roi())
        assert len(out) == 1
        assert len(out[0]) == 5

    def test_zigzag_splits_in_two(self):
        ys = [5.0, 5.0, 5.0, 20.0, 20.0, 5.0, 5.0, 5.0]
        out = clip_to_region([self.track_through(ys)], self.roi())
        assert len(out) == 2

    def test_output_samples_inside(self):
        rng = np.random.default_rng(0)
        ys = rng.uniform(-5, 15, 50)
        out = clip_to_region([self.track_through(ys)], self.roi())
        for tr in out:
            assert self.roi().contains(tr.positions).all()


class TestRoundTrip:
    def test_positions_within_1mm(self, tmp_path):
        rng = np.random.default_rng(1)
        n = 200
        times = np.arange(n) * 0.1
        pos = np.cumsum(rng.uniform(-0.1, 0.1, size=(n, 2)), axis=0) + 5.0
        vel = np.gradient(pos, 0.1, axis=0)
        tr = Track(9, times, pos, np.linalg.norm(vel, axis=1),
                   np.arctan2(vel[:, 1], vel[:, 0]), 0.1)
        path = tmp_path / "out.csv"
        write_atc_csv([tr], path)
        samples, report = parse_atc_csv(path)
        assert report.skipped_count == 0
        tracks = build_tracks(samples, period=0.1)
        assert len(tracks) == 1
        assert np.abs(tracks[0].positions - pos).max() <= 1e-3


class TestExcludeIntervals:
    def test_drops_inside_spans(self):
        samples, _ = parse_atc_csv(make_samples([(0, 1, 0, 0), (500, 1, 1, 1), (1000, 1, 2, 2)]))
        kept = exclude_time_intervals(samples, [[400, 600]])
        assert [s.time for s in kept] == [0.0, 1.0]

    def test_empty_list_keeps_all(self):
        samples, _ = parse_atc_csv(make_samples([(0, 1, 0, 0), (500, 1, 1, 1)]))
        assert len(exclude_time_intervals(samples, [])) == 2


def test_roi_validation():
    with pytest.raises(ValueError):
        RegionOfInterest((1.0, 0.0), (0.0, 5.0))
