import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from dkgm.metrics import sharpness
from dkgm.synthdata import (SpiralParams, affine_transform, inverse_affine_transform,
                            manifold_distance, read_pgm, shapes_corpus, spiral, spiral_grid,
                            swiss_roll, write_pgm, write_points_csv)


def test_swissroll_spiral_defaults():
    p = SpiralParams()
    assert p.angle_scale == 4 * math.pi / 3
    assert p.latent_rate == 1.0
    assert p.affine_scale == 0.1 and p.affine_shift == (1.0, 1.0)


def test_spiral_points():
    np.testing.assert_array_equal(spiral(0.0), [0.0, 0.0])
    pt = spiral(9 / 16)
    np.testing.assert_allclose(pt, [-math.pi / 3, 0.0], atol=1e-15)
    np.testing.assert_allclose(pt, [-1.04720, 0.0], atol=5e-6)


@given(st.floats(0, 50), st.floats(1e-6, 5))
def test_radius_increasing(u, du):
    r = np.linalg.norm(spiral([u, u + du]), axis=1)
    assert r[1] > r[0]
    assert r[0] == pytest.approx(4 * math.pi / 9 * math.sqrt(u), abs=1e-12)


def test_latent_mean():
    _, u = swiss_roll(100_000, rng=np.random.default_rng(0))
    assert abs(u.mean() - 1.0) < 0.02


def test_swiss_roll_points_follow_latents():
    pts, u = swiss_roll(50, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(pts, spiral(u))
    with pytest.raises(ValueError):
        swiss_roll(0)


def test_params_validation():
    with pytest.raises(ValueError):
        SpiralParams(angle_scale=0.0)
    with pytest.raises(ValueError):
        SpiralParams(latent_rate=-1.0)


def test_affine_examples():
    np.testing.assert_array_equal(affine_transform([[0.0, 0.0]]), [[1.0, 1.0]])
    out = affine_transform([[-math.pi / 3, 0.0]])
    np.testing.assert_allclose(out, [[1 - 0.1 * math.pi / 3, 1.0]], rtol=1e-15)
    np.testing.assert_allclose(out, [[0.89528, 1.0]], atol=5e-6)
    x = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_array_equal(affine_transform(x, 1.0, (0.0, 0.0)), x)


@given(hnp.arrays(np.float64, (6, 2), elements=st.floats(-1e3, 1e3)),
       st.floats(0.01, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_affine_invertible(points, scale, sx, sy):
    back = inverse_affine_transform(affine_transform(points, scale, (sx, sy)), scale, (sx, sy))
    np.testing.assert_allclose(back, points, atol=1e-12 * (1 + 1 / scale), rtol=1e-12)


def test_corpus_contract():
    imgs = shapes_corpus(40, 16, np.random.default_rng(2))
    assert imgs.shape == (40, 16, 16)
    assert set(np.unique(imgs)) <= {0.0, 1.0}
    assert np.all(imgs.reshape(40, -1).max(axis=1) == 1.0)
    assert sharpness(imgs) > 0
    again = shapes_corpus(40, 16, np.random.default_rng(2))
    assert np.array_equal(imgs, again)
    with pytest.raises(ValueError):
        shapes_corpus(1, 7)


def test_on_spiral_distance_within_bound():
    _, u = swiss_roll(500, rng=np.random.default_rng(3))
    pts = spiral(u[u < 8])
    dist, bound = manifold_distance(pts, return_bound=True)
    assert dist < bound


def test_origin_distance_brute_force():
    # brute-force nearest grid point to the origin, computed independently
    u = np.linspace(0, 8, 10_000)
    r = (4 * math.pi / 3) * np.sqrt(u) / 3
    assert manifold_distance(np.zeros((4, 2))) == pytest.approx(r.min(), abs=1e-15)
    pt = np.array([[0.7, -0.2]])
    grid = np.stack([r * np.cos(4 * math.pi / 3 * np.sqrt(u)),
                     r * np.sin(4 * math.pi / 3 * np.sqrt(u))], axis=1)
    expected = np.min(np.linalg.norm(grid - pt, axis=1))
    assert manifold_distance(pt) == pytest.approx(expected, rel=1e-9)


def test_translation_increases_distance():
    pts, _ = swiss_roll(200, rng=np.random.default_rng(4))
    assert manifold_distance(pts + 10.0) > manifold_distance(pts)


def test_grid_chord():
    ref, chord = spiral_grid(n_grid=1000)
    assert ref.shape == (1000, 2)
    assert chord == pytest.approx(np.max(np.linalg.norm(np.diff(ref, axis=0), axis=1)))


def test_points_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_points_csv(path, [[0.5, -1.0]], [0.25])
    assert path.read_text() == "x,y,u\n0.5,-1.0,0.25\n"


def test_pgm_layout_and_round_trip(tmp_path):
    img = np.array([[0.0, 0.5, 1.0], [0.25, 1.0, 0.0]])
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n3 2\n255\n")
    assert list(blob[-6:]) == [0, 128, 255, 64, 255, 0]
    np.testing.assert_allclose(read_pgm(path), np.round(img * 255) / 255)
