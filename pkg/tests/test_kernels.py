import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropheight import _fallback, kernels
from cropheight.core import RigidPose
from cropheight.farmgen import FarmSpec, generate_farm
from cropheight.groundheight import sample_triples
from cropheight.scansim import Scene, SensorModel, simulate_scan

compiled = kernels.backends().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
    assert "python" in kernels.backends()


def _random_scene(seed):
    spec = FarmSpec(farm_size=9.0, n_vertices=25, height_range=0.8, plants_per_plot=15, rows=2,
                    plots_per_row=3, plot_width=1.0, plot_length=1.5, gap_x=0.5, gap_y=0.5, seed=seed)
    return Scene.from_farm(generate_farm(spec), cell=0.37 + 0.1 * (seed % 3))


@needs_compiled
@pytest.mark.parametrize("seed", range(6))
def test_ray_casting_backends_agree(seed):
    scene = _random_scene(seed)
    rng = np.random.default_rng(seed)
    origin = np.array([rng.uniform(0, 9), rng.uniform(0, 9), rng.uniform(2, 8)])
    dirs = rng.normal(size=(3000, 3))
    dirs[:, 2] = -np.abs(dirs[:, 2])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t1, k1, i1 = scene.cast(origin, dirs, 50.0, compiled)
    t2, k2, i2 = scene.cast(origin, dirs, 50.0, _fallback)
    np.testing.assert_array_equal(k1, k2)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_array_equal(t1, t2)
    assert (k1 == 2).any() and (k1 == 1).any()


@needs_compiled
def test_scans_bit_identical():
    scene = _random_scene(11)
    sensor = SensorModel(azimuth_step=math.radians(0.5), seed=4)
    pose = RigidPose.from_yaw(1.0, (4.5, 4.5, 7.0))
    a = simulate_scan(pose, sensor, scene, 3, compiled)
    b = simulate_scan(pose, sensor, scene, 3, _fallback)
    np.testing.assert_array_equal(a, b)


@needs_compiled
def test_origin_outside_grid():
    scene = _random_scene(2)
    rng = np.random.default_rng(0)
    origin = np.array([-6.0, 15.0, 4.0])
    target = np.column_stack([rng.uniform(0, 9, 500), rng.uniform(0, 9, 500), np.zeros(500)])
    dirs = target - origin
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r1 = scene.cast(origin, dirs, 100.0, compiled)
    r2 = scene.cast(origin, dirs, 100.0, _fallback)
    for a, b in zip(r1, r2):
        np.testing.assert_array_equal(a, b)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(3, 200), st.integers(1, 300), st.floats(0.001, 0.5), st.integers(0, 2**31))
def test_ransac_counts_agree(n, iters, thr, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)) * [2.0, 2.0, 0.2]
    samples = sample_triples(n, iters, rng)
    np.testing.assert_array_equal(compiled.ransac_counts(pts, samples, thr),
                                  _fallback.ransac_counts(pts, samples, thr))


@pytest.mark.parametrize("impl", ["python", "compiled"])
def test_ransac_counts_brute_force(impl):
    mod = kernels.backends().get(impl)
    if mod is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(40, 3))
    pts[:3] = [[0, 0, 0], [1, 1, 1], [2, 2, 2]]  # collinear triple
    samples = np.vstack([[[0, 1, 2]], sample_triples(40, 50, rng)]).astype(np.int64)
    got = mod.ransac_counts(pts, samples, 0.3)
    assert got[0] == -1
    for (a, b, c), count in zip(samples[1:], got[1:]):
        n = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        d = np.abs((pts - pts[a]) @ n) / np.linalg.norm(n)
        assert count == int(np.sum(d <= 0.3))
