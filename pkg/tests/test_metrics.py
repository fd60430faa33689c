import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.signal import convolve2d

from dkgm.metrics import (LAPLACE_KERNEL, empirical_bias, energy_distance, image_sharpness,
                          laplace_activations, sharpness, write_metrics_csv)
from dkgm.pipeline import gaussian_blur
from dkgm.synthdata import shapes_corpus

images = hnp.arrays(np.float64, st.tuples(st.integers(3, 10), st.integers(3, 10)),
                    elements=st.floats(0, 1))


def dense_laplace(img):
    # explicit loop over the valid region
    h, w = img.shape
    out = np.empty((h - 2, w - 2))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            out[i - 1, j - 1] = np.sum(img[i - 1:i + 2, j - 1:j + 2] * LAPLACE_KERNEL)
    return out


def test_kernel_taps():
    assert LAPLACE_KERNEL.sum() == 0
    assert LAPLACE_KERNEL[1, 1] == -4


def test_constant_image():
    assert sharpness(np.full((6, 6), 0.3)) == 0.0


def test_checkerboard_against_dense_oracle():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)
    acts = dense_laplace(board)
    assert set(np.unique(acts)) == {-4.0, 4.0}
    assert sharpness(board) == pytest.approx(np.var(acts))
    assert sharpness(board) == 16.0


@settings(max_examples=40)
@given(images)
def test_activations_against_oracles(img):
    np.testing.assert_allclose(laplace_activations(img), dense_laplace(img), atol=1e-12)
    np.testing.assert_allclose(laplace_activations(img),
                               convolve2d(img, LAPLACE_KERNEL, mode="valid"), atol=1e-12)


@given(images, st.floats(-3, 3))
def test_shift_invariance(img, c):
    assert image_sharpness(img + c) == pytest.approx(image_sharpness(img), abs=1e-9)


@given(images, st.floats(-4, 4))
def test_scale_law(img, c):
    assert image_sharpness(c * img) == pytest.approx(c * c * image_sharpness(img),
                                                     rel=1e-9, abs=1e-12)


def test_per_image_average():
    a = (np.indices((5, 5)).sum(axis=0) % 2).astype(float)
    b = np.zeros((5, 5))
    assert sharpness(np.stack([a, b])) == pytest.approx(0.5 * image_sharpness(a))


def test_blur_reduces_sharpness_on_every_image():
    for img in shapes_corpus(100, 16, np.random.default_rng(0)):
        assert image_sharpness(gaussian_blur(img, 1.0)) < image_sharpness(img)


def test_too_small_image():
    with pytest.raises(ValueError):
        sharpness(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        sharpness(np.zeros((0, 4, 4)))


def test_bias_identity_and_shift():
    x = np.array([0.5, -1.5, 2.0])
    rng = np.random.default_rng(0)
    est = empirical_bias(lambda v, r: v, x, 5, rng)
    assert np.all(est.bias == 0) and np.all(est.stderr == 0)
    c = np.array([0.25, -0.5, 1.0])
    est = empirical_bias(lambda v, r: v + c, x, 3, rng)
    np.testing.assert_array_equal(est.bias, -c)
    with pytest.raises(ValueError):
        empirical_bias(lambda v, r: v, x, 1, rng)


def test_bias_of_unbiased_noise():
    x = np.zeros(4)
    rng = np.random.default_rng(1)
    est = empirical_bias(lambda v, r: v + 0.2 * r.standard_normal(v.shape), x, 10_000, rng)
    assert np.linalg.norm(est.bias) < 3 * np.linalg.norm(est.stderr)
    np.testing.assert_allclose(est.stderr, 0.2 / 100, rtol=0.05)


def test_energy_distance_examples():
    a = np.random.default_rng(2).standard_normal((20, 2))
    assert energy_distance(a, a) == 0.0
    assert energy_distance([0.0], [1.0]) == 2.0
    with pytest.raises(ValueError):
        energy_distance(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))


def test_energy_distance_against_loops():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((7, 3)), rng.standard_normal((5, 3)) + 0.5

    def mean_dist(x, y):
        return np.mean([np.linalg.norm(p - q) for p in x for q in y])

    expected = 2 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)
    assert energy_distance(a, b) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=20)
@given(hnp.arrays(np.float64, (6, 2), elements=st.floats(-10, 10)),
       hnp.arrays(np.float64, (4, 2), elements=st.floats(-10, 10)))
def test_energy_distance_symmetric(a, b):
    assert energy_distance(a, b) == pytest.approx(energy_distance(b, a), abs=1e-9)
    assert energy_distance(a, b) >= 0


def test_energy_distance_ordering():
    rng = np.random.default_rng(4)
    base = rng.standard_normal(1000)
    near = energy_distance(base, rng.standard_normal(1000) + 0.1)
    far = energy_distance(base, rng.standard_normal(1000) + 3.0)
    assert far > near


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [("sharpness", 0.5, None, 10), ("bias", 0.25, 0.125, 100)])
    assert path.read_text() == "metric,value,stderr,n\nsharpness,0.5,,10\nbias,0.25,0.125,100\n"
