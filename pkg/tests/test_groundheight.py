import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropheight.errors import AmbiguousPlaneError, DegenerateInputError, DegeneratePlotError, NoGroundFoundError
from cropheight.groundheight import (
    HeightReport,
    PlaneModel,
    RansacParams,
    default_min_inliers,
    estimate_plot_heights,
    lsq_plane,
    plot_height,
    point_plane_heights,
    ransac_plane,
    sample_triples,
)
from cropheight.plotdetect import PlotGrid


def angle_deg(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    c = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(min(1.0, c)))


def nearest_rank(values, p):
    s = sorted(values)
    return s[max(1, math.ceil(p * len(s) / 100)) - 1]


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class TestLsqPlane:
    def test_horizontal(self, rng):
        pts = np.column_stack([rng.uniform(size=(50, 2)), np.full(50, 5.0)])
        pl = lsq_plane(pts)
        assert pl.centroid[2] == pytest.approx(5.0)
        np.testing.assert_allclose(pl.normal, [0, 0, 1], atol=1e-12)

    def test_forty_five_degrees(self, rng):
        xy = rng.uniform(-1, 1, size=(40, 2))
        pl = lsq_plane(np.column_stack([xy, xy[:, 0]]))
        np.testing.assert_allclose(pl.normal, np.array([-1, 0, 1]) / math.sqrt(2), atol=1e-9)

    def test_noisy_horizontal(self, rng):
        pts = np.column_stack([rng.uniform(0, 5, size=(1000, 2)), rng.normal(0, 0.01, 1000)])
        assert angle_deg(lsq_plane(pts).normal, [0, 0, 1]) < 0.5

    def test_collinear_rejected(self):
        t = np.linspace(0, 1, 10)
        with pytest.raises(AmbiguousPlaneError):
            lsq_plane(np.column_stack([t, 2 * t, 3 * t]))

    def test_too_few(self):
        with pytest.raises(DegenerateInputError):
            lsq_plane(np.zeros((2, 3)))

    def test_normal_points_up(self, rng):
        for _ in range(10):
            pl = lsq_plane(rng.normal(size=(20, 3)) * [5, 5, 0.1])
            assert pl.normal[2] > 0
            assert np.linalg.norm(pl.normal) == pytest.approx(1.0, abs=1e-12)

    def test_translation_equivariance(self, rng):
        pts = rng.normal(size=(60, 3)) * [3, 2, 0.2]
        v = rng.uniform(-100, 100, 3)
        a, b = lsq_plane(pts), lsq_plane(pts + v)
        np.testing.assert_allclose(np.array(b.centroid) - a.centroid, v, atol=1e-9)
        np.testing.assert_allclose(b.normal, a.normal, atol=1e-9)

    def test_beats_perturbed_planes(self, rng):
        pts = rng.normal(size=(300, 3)) * [4, 4, 0.05]
        pts[:, 2] += 0.2 * pts[:, 0]
        pl = lsq_plane(pts)
        best = np.sum(point_plane_heights(pts, pl) ** 2)
        n0 = np.array(pl.normal)
        for _ in range(1000):
            axis = np.cross(n0, rng.normal(size=3))
            axis /= np.linalg.norm(axis)
            ang = math.radians(rng.uniform(0, 5))
            n = n0 * math.cos(ang) + np.cross(axis, n0) * math.sin(ang)
            c = np.array(pl.centroid) + n0 * rng.uniform(-0.05, 0.05)
            assert best <= np.sum(((pts - c) @ n) ** 2) + 1e-12


class TestHeights:
    def test_on_plane(self):
        pl = PlaneModel.from_arrays((1, 2, 3), (0, 0, 1))
        assert point_plane_heights([[5, 5, 3]], pl)[0] == 0.0

    def test_above_plane(self):
        pl = PlaneModel.from_arrays((0, 0, 0), (0, 0, 1))
        assert point_plane_heights([[0, 0, 1.5]], pl)[0] == 1.5

    def test_tilted_plane(self):
        pl = PlaneModel.from_arrays((0, 0, 0), (0, 0.6, 0.8))
        assert point_plane_heights([[0, 1, 1]], pl)[0] == pytest.approx(1.4, abs=1e-12)

    def test_rotation_invariance(self, rng):
        pts = rng.normal(size=(30, 3))
        n = rng.normal(size=3)
        n[2] = abs(n[2]) + 0.1
        pl = PlaneModel.from_arrays(rng.normal(size=3), n)
        h = point_plane_heights(pts, pl)
        R = random_rotation(rng)
        rn = R @ np.array(pl.normal)
        # heights are measured along the rotated normal, so skip the z>0 flip
        rotated = PlaneModel(tuple(R @ np.array(pl.centroid)), tuple(rn))
        np.testing.assert_allclose(point_plane_heights(pts @ R.T, rotated), h, atol=1e-9)


class TestPlotHeight:
    def test_max(self):
        assert plot_height([0.5, 1.0, 0.7], "max") == 1.0

    def test_percentile_99_of_100(self):
        vals = [i / 100 for i in range(1, 101)]
        assert plot_height(vals, "percentile", 99) == 0.99

    def test_single_element(self):
        assert plot_height([0.3], "max") == plot_height([0.3], "percentile", 50) == 0.3

    def test_empty(self):
        with pytest.raises(DegeneratePlotError):
            plot_height([], "max")

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5, width=64), min_size=1, max_size=300), st.floats(0.5, 100))
    def test_nearest_rank_oracle(self, vals, p):
        assert plot_height(vals, "percentile", p) == nearest_rank(vals, p)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5, width=64), min_size=1, max_size=100))
    def test_p100_is_max(self, vals):
        assert plot_height(vals, "percentile", 100) == plot_height(vals, "max")


class TestRansac:
    def test_sample_triples_distinct(self, rng):
        s = sample_triples(5, 2000, rng)
        assert np.all((s[:, 0] != s[:, 1]) & (s[:, 1] != s[:, 2]) & (s[:, 0] != s[:, 2]))
        assert s.min() == 0 and s.max() == 4

    def test_sample_triples_uniform(self, rng):
        s = sample_triples(4, 40000, rng)
        counts = np.bincount(s.ravel(), minlength=4)
        np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.01)

    def test_floor_with_spikes(self, rng):
        floor = np.column_stack([rng.uniform(0, 1, (100, 2)), np.zeros(100)])
        spikes = np.column_stack([rng.uniform(0, 1, (10, 2)), np.ones(10)])
        fit = ransac_plane(np.vstack([floor, spikes]), RansacParams(0.05, 200, 10, 0))
        assert sorted(fit.inlier_indices.tolist()) == list(range(100))
        np.testing.assert_allclose(fit.plane.normal, [0, 0, 1], atol=1e-12)
        assert fit.plane.centroid[2] == pytest.approx(0.0, abs=1e-12)

    def test_coplanar_all_inliers(self, rng):
        xy = rng.uniform(0, 3, (80, 2))
        pts = np.column_stack([xy, 0.3 * xy[:, 0] - 0.1 * xy[:, 1] + 2])
        fit = ransac_plane(pts, RansacParams(0.01, 50, 3, 1))
        assert len(fit.inlier_indices) == 80 and len(fit.outlier_indices) == 0
        assert np.abs(point_plane_heights(pts, fit.plane)).max() < 1e-9

    def test_noisy_sloped_plane(self, rng):
        xy = rng.uniform(0, 4, (600, 2))
        pts = np.column_stack([xy, 0.1 * xy[:, 0] + rng.normal(0, 0.01, 600)])
        fit = ransac_plane(pts, RansacParams(0.03, 300, 50, 2))
        assert angle_deg(fit.plane.normal, [-0.0995, 0, 0.995]) < 1.0

    def test_inliers_within_threshold_of_candidate(self, rng):
        pts = rng.normal(size=(300, 3)) * [3, 3, 0.1]
        fit = ransac_plane(pts, RansacParams(0.05, 100, 3, 4))
        d = np.abs(point_plane_heights(pts[fit.inlier_indices], fit.candidate))
        assert d.max() <= 0.05 + 1e-9
        assert len(fit.inlier_indices) == fit.candidate_counts.max()
        assert set(fit.inlier_indices) | set(fit.outlier_indices) == set(range(300))

    def test_deterministic(self, rng):
        pts = rng.normal(size=(200, 3))
        a = ransac_plane(pts, RansacParams(0.1, 100, 3, 9))
        b = ransac_plane(pts, RansacParams(0.1, 100, 3, 9))
        assert a.plane == b.plane

    def test_collinear_input(self):
        t = np.linspace(0, 1, 20)
        with pytest.raises(DegenerateInputError):
            ransac_plane(np.column_stack([t, t, t]), RansacParams())

    def test_too_few_points(self):
        with pytest.raises(DegenerateInputError):
            ransac_plane(np.zeros((2, 3)), RansacParams())

    def test_min_inliers(self, rng):
        with pytest.raises(NoGroundFoundError):
            ransac_plane(rng.normal(size=(30, 3)), RansacParams(0.001, 20, 25, 0))

    def test_default_min_inliers(self):
        assert default_min_inliers(100) == 50
        assert default_min_inliers(10_000) == 500


def _plot_grid():
    return PlotGrid((0.0, 0.0), 0.0, 1.0, 2.0, 2.0, 4.0, 1, 1)


class TestEstimate:
    def test_spike_height(self, rng):
        ring = np.column_stack([rng.uniform(-0.5, 0.5, 1500), rng.uniform(-2.5, 2.5, 1500), np.zeros(1500)])
        spike = np.column_stack([rng.uniform(-0.05, 0.05, (200, 2)), np.full(200, 1.0)])
        rep = estimate_plot_heights(np.vstack([ring, spike]), None, _plot_grid(), RansacParams(), 0.75,
                                    "percentile", 99)
        (p,) = rep.plots
        assert not p.degenerate
        assert p.height == pytest.approx(1.0, abs=0.05)

    def test_only_ground_is_degenerate(self, rng):
        ground = np.column_stack([rng.uniform(-0.5, 0.5, (300, 2)), np.zeros(300)])
        (p,) = estimate_plot_heights(ground, None, _plot_grid(), RansacParams(), 0.5).plots
        assert p.degenerate and math.isnan(p.height)

    def test_empty_plot_is_degenerate(self):
        (p,) = estimate_plot_heights(np.array([[50.0, 50, 0]]), None, _plot_grid(), RansacParams(), 0.5).plots
        assert p.degenerate and p.n_points == 0

    def test_raw_points_are_added(self, rng):
        ground = np.column_stack([rng.uniform(-0.5, 0.5, (300, 2)), np.zeros(300)])
        raw = np.column_stack([rng.uniform(-0.1, 0.1, (20, 2)), np.full(20, 0.8)])
        (a,) = estimate_plot_heights(ground, raw, _plot_grid(), RansacParams(), 0.5, "max").plots
        assert a.n_points == 320 and a.height == pytest.approx(0.8)

    def test_workers_do_not_change_results(self, rng):
        grid = PlotGrid((0.0, 0.0), 0.0, 1.0, 2.0, 2.0, 4.0, 2, 3)
        pts = []
        for c in grid.centers():
            g = np.column_stack([c + rng.uniform(-1, 1, (400, 2)) * [0.5, 2], rng.normal(0, 0.01, 400)])
            v = np.column_stack([c + rng.uniform(-0.3, 0.3, (100, 2)), rng.uniform(0.2, 0.9, 100)])
            pts += [g, v]
        cloud = np.vstack(pts)
        a = estimate_plot_heights(cloud, None, grid, RansacParams(), 0.75, workers=1).to_csv()
        b = estimate_plot_heights(cloud, None, grid, RansacParams(), 0.75, workers=4).to_csv()
        assert a == b

    def test_csv_round_trip(self, rng):
        ring = np.column_stack([rng.uniform(-0.5, 0.5, 800), rng.uniform(-2, 2, 800), np.zeros(800)])
        spike = np.column_stack([rng.uniform(-0.1, 0.1, (60, 2)), rng.uniform(0.3, 0.7, 60)])
        rep = estimate_plot_heights(np.vstack([ring, spike]), None, _plot_grid(), RansacParams(), 0.5)
        text = rep.to_csv()
        assert text.splitlines()[0] == "plot_row,plot_col,center_x,center_y,n_points,est_height_m,method,degenerate_flag"
        assert HeightReport.from_csv(text).to_csv() == text
