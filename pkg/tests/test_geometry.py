import numpy as np
import pytest

from socialzone.geometry import (
    Barrier,
    Ellipse,
    Segment,
    barrier_gradient,
    barrier_value,
    ellipse_distance,
    segment_distance,
    signed_line_distance,
    shape_distance,
    trim,
    wrap_angle,
)

from oracles import exact_ellipse_distance, exact_segment_distance, fd_gradient


def random_segment(rng, scale=4.0):
    while True:
        a = rng.uniform(-scale, scale, 2)
        b = rng.uniform(-scale, scale, 2)
        if np.linalg.norm(a - b) > 0.2:
            return Segment(a, b)


class TestSignedLineDistance:
    def test_hand_value(self):
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        assert signed_line_distance([1.0, 1.0], seg) == pytest.approx(-1.0)

    def test_zero_on_line(self):
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        for x in (-3.0, 0.5, 7.0):
            assert signed_line_distance([x, 0.0], seg) == pytest.approx(0.0, abs=1e-15)

    def test_endpoint_swap_negates(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            seg = random_segment(rng)
            rev = Segment(seg.endpoint_b, seg.endpoint_a)
            p = rng.uniform(-5, 5, 2)
            assert signed_line_distance(p, seg) == pytest.approx(
                -signed_line_distance(p, rev), rel=1e-12
            )


class TestTrim:
    def test_midpoint(self):
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        assert trim(seg.midpoint, seg) == pytest.approx(seg.length / 4.0)

    def test_endpoint_zero(self):
        seg = Segment([0.3, -1.0], [2.0, 4.0])
        assert trim(seg.endpoint_a, seg) == pytest.approx(0.0, abs=1e-12)
        assert trim(seg.endpoint_b, seg) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value_beyond_endpoint(self):
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        assert trim([3.0, 0.0], seg) == pytest.approx(-1.5)


class TestSegmentDistance:
    def test_lateral_point_exact(self):
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        assert segment_distance([1.0, 1.0], seg) == pytest.approx(1.0)

    def test_collinear_overestimate(self):
        # Documented bias: beyond an endpoint along the line the
        # approximation reads 1.5 where the true distance is 1.0.
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        assert segment_distance([3.0, 0.0], seg) == pytest.approx(1.5)
        assert exact_segment_distance([3.0, 0.0], seg.endpoint_a, seg.endpoint_b) == pytest.approx(1.0)

    def test_zero_on_segment(self):
        seg = Segment([-1.0, 2.0], [3.0, -0.5])
        for w in (0.0, 0.25, 0.5, 0.99, 1.0):
            p = seg.endpoint_a + w * (seg.endpoint_b - seg.endpoint_a)
            assert segment_distance(p, seg) == pytest.approx(0.0, abs=1e-12)

    def test_exact_inside_trim_disk(self):
        # t(x) >= 0 iff x lies in the disk of radius L/2 at the midpoint,
        # where the closest segment point is interior and d == |g|.
        rng = np.random.default_rng(1)
        for _ in range(300):
            seg = random_segment(rng)
            r = 0.5 * seg.length * np.sqrt(rng.uniform())
            phi = rng.uniform(0, 2 * np.pi)
            p = seg.midpoint + r * np.array([np.cos(phi), np.sin(phi)])
            assert trim(p, seg) >= -1e-12
            d = segment_distance(p, seg)
            exact = exact_segment_distance(p, seg.endpoint_a, seg.endpoint_b)
            assert d == pytest.approx(exact, abs=1e-12)

    def test_never_underestimates(self):
        rng = np.random.default_rng(2)
        grid = np.stack(np.meshgrid(np.linspace(-6, 6, 61), np.linspace(-6, 6, 61)), -1).reshape(-1, 2)
        for _ in range(50):
            seg = random_segment(rng)
            d = segment_distance(grid, seg)
            exact = exact_segment_distance(grid, seg.endpoint_a, seg.endpoint_b)
            assert (d >= exact - 1e-12).all()


class TestEllipseDistance:
    def test_boundary_zero(self):
        ell = Ellipse([0.0, 0.0], 2.0, 1.0)
        assert ellipse_distance([2.0, 0.0], ell) == pytest.approx(0.0, abs=1e-12)

    def test_center_value(self):
        ell = Ellipse([0.0, 0.0], 2.0, 1.0)
        assert ellipse_distance([0.0, 0.0], ell) == pytest.approx(np.sqrt(3) - 2.0)

    def test_major_axis_exact(self):
        ell = Ellipse([0.0, 0.0], 2.0, 1.0)
        assert ellipse_distance([4.0, 0.0], ell) == pytest.approx(2.0)

    def test_sign_pattern(self):
        rng = np.random.default_rng(3)
        ell = Ellipse([0.5, -0.3], 1.5, 0.9, 0.7)
        boundary = ell.boundary_points(400)
        assert np.abs(ellipse_distance(boundary, ell)).max() < 1e-9
        inner = ell.center + 0.5 * (boundary - ell.center)
        outer = ell.center + 1.8 * (boundary - ell.center)
        assert (ellipse_distance(inner, ell) < 0).all()
        assert (ellipse_distance(outer, ell) > 0).all()
        del rng

    def test_circle_case_exact(self):
        circ = Ellipse([1.0, 1.0], 0.8, 0.8)
        rng = np.random.default_rng(4)
        p = rng.uniform(-3, 3, size=(200, 2))
        expected = np.linalg.norm(p - circ.center, axis=1) - 0.8
        assert np.allclose(ellipse_distance(p, circ), expected, atol=1e-12)

    def test_focal_sum_error_bound_outside(self):
        # The approximation error outside stays below c^2 / (2a) on a
        # window around social-zone-shaped ellipses; recorded, not assumed.
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.uniform(0.5, 1.2)
            b = rng.uniform(0.65, 0.95) * a
            theta = rng.uniform(-np.pi, np.pi)
            center = rng.uniform(-1, 1, 2)
            ell = Ellipse(center, a, b, theta)
            half = a + 1.5
            xs = np.linspace(center[0] - half, center[0] + half, 81)
            ys = np.linspace(center[1] - half, center[1] + half, 81)
            grid = np.stack(np.meshgrid(xs, ys), -1).reshape(-1, 2)
            d = ellipse_distance(grid, ell)
            outside = d > 1e-9
            errs = [
                abs(d[i] - exact_ellipse_distance(grid[i], center, a, b, theta))
                for i in np.nonzero(outside)[0][::7]
            ]
            bound = ell.focal_half_distance**2 / (2.0 * a)
            assert max(errs) < bound


class TestRigidInvariance:
    def test_both_shapes(self):
        rng = np.random.default_rng(6)
        seg = Segment([0.2, -1.0], [1.5, 2.0])
        ell = Ellipse([0.4, 0.1], 1.3, 0.7, 0.4)
        p = rng.uniform(-3, 3, size=(50, 2))
        d_seg = segment_distance(p, seg)
        d_ell = ellipse_distance(p, ell)
        for _ in range(1000):
            phi = rng.uniform(-np.pi, np.pi)
            shift = rng.uniform(-5, 5, 2)
            rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
            p2 = p @ rot.T + shift
            seg2 = Segment(rot @ seg.endpoint_a + shift, rot @ seg.endpoint_b + shift)
            ell2 = Ellipse(rot @ ell.center + shift, ell.a, ell.b, ell.theta + phi)
            assert np.abs(segment_distance(p2, seg2) - d_seg).max() <= 1e-9
            assert np.abs(ellipse_distance(p2, ell2) - d_ell).max() <= 1e-9


class TestBarrier:
    def test_boundary_point_value(self):
        ell = Ellipse([0.0, 0.0], 1.0, 0.6)
        bar = Barrier(ell, clearance=0.5, margin=0.05)
        assert barrier_value([1.0, 0.0], bar) == pytest.approx(-0.55)

    def test_offset_zero(self):
        seg = Segment([0.0, 0.0], [2.0, 0.0])
        bar = Barrier(seg, clearance=0.5, margin=0.05)
        assert barrier_value([1.0, 0.55], bar) == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(7)
        shapes = [
            Segment([0.0, 0.0], [2.0, 1.0]),
            Ellipse([0.3, -0.2], 1.4, 0.8, 0.5),
            Ellipse([0.0, 0.0], 0.9, 0.9),  # circle case
        ]
        for shape in shapes:
            bar = Barrier(shape, 0.5, 0.05)
            checked = 0
            while checked < 100:
                p = rng.uniform(-3, 3, 2)
                if abs(shape_distance(p, shape)) < 1e-3:
                    continue
                if isinstance(shape, Segment) and abs(trim(p, shape)) < 1e-3:
                    continue  # smoothed kink, gradient intentionally regularized
                g = barrier_gradient(p, bar)
                g_fd = fd_gradient(lambda x: barrier_value(x, bar), p)
                assert np.abs(g - g_fd).max() <= 1e-6 * max(1.0, np.abs(g_fd).max())
                checked += 1

    def test_near_circle_radial_gradient(self):
        ell = Ellipse([0.0, 0.0], 1.0 + 1e-12, 1.0)
        rng = np.random.default_rng(8)
        for _ in range(50):
            p = rng.uniform(-2, 2, 2)
            if np.linalg.norm(p) < 0.2:
                continue
            g = barrier_gradient(p, Barrier(ell, 0.0, 0.0))
            radial = p / np.linalg.norm(p)
            assert np.abs(g - radial).max() < 1e-5

    def test_major_axis_gradient_direction(self):
        ell = Ellipse([0.0, 0.0], 2.0, 1.0)
        g = barrier_gradient([4.0, 0.0], Barrier(ell, 0.0, 0.0))
        assert g[0] == pytest.approx(1.0, abs=1e-9)
        assert g[1] == pytest.approx(0.0, abs=1e-9)


class TestWrapAngle:
    def test_range(self):
        vals = wrap_angle(np.linspace(-10, 10, 2001))
        assert (vals > -np.pi).all() and (vals <= np.pi).all()

    def test_negative_pi_maps_to_pi(self):
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)

    def test_validation(self):
        with pytest.raises(ValueError):
            Segment([0.0, 0.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            Ellipse([0.0, 0.0], 0.5, 0.8)
