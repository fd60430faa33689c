import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkgm.errors import NumericError
from dkgm.metrics import sharpness
from dkgm.nn import MlpSpec, TimeConditionedNet, central_differences, max_relative_error
from dkgm.pipeline import (BlurKernel, DkgmModel, Stage1Config, Stage2Config, corrupt,
                           dkgm_sample, gaussian_blur, load_model, save_model, stage1_loss,
                           stage2_forward, stage2_loss, stage2_loss_and_grad, train_stage1,
                           train_stage2, write_loss_csv)
from dkgm.sa import Schedule
from dkgm.synthdata import affine_transform, manifold_distance, shapes_corpus, swiss_roll


def identity_net(width, temb=0):
    return TimeConditionedNet.zeros(MlpSpec((width, 4, width), "tanh", True, temb))


def zero_net(width, temb=0):
    return TimeConditionedNet.zeros(MlpSpec((width, 4, width), "tanh", False, temb))


def half_net():
    # relu(v)/2 - relu(-v)/2 == v/2 for every scalar v and step t
    spec = MlpSpec((1, 2, 1), "relu", False, 2)
    params = np.zeros(spec.n_params)
    params[[0, 3]] = [1.0, -1.0]   # first-layer rows read v, ignore the embedding
    params[6:8] = [0.5, -0.5]
    return TimeConditionedNet(spec, params)


def dense_blur(img, b):
    # direct 2-d convolution with the outer-product kernel on a reflect-padded grid
    w = BlurKernel(b).weights
    k2 = np.outer(w, w)
    r = len(w) // 2
    padded = np.pad(img, r, mode="reflect")
    out = np.zeros_like(img)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            out[i, j] = np.sum(padded[i:i + 2 * r + 1, j:j + 2 * r + 1] * k2)
    return out


# -- stage 1 ---------------------------------------------------------------------

def test_stage1_loss_identity_and_zero():
    x = np.array([0.3, -1.2])
    assert stage1_loss(identity_net(2), x, np.zeros((1, 2)), 0.5) == 0.0
    eps = np.array([[0.7, -0.4]])
    assert stage1_loss(identity_net(2), x, eps, 0.3) == pytest.approx(0.09 * 0.65)
    assert stage1_loss(zero_net(2), x, np.zeros(2), 0.5) == pytest.approx(0.09 + 1.44)
    with pytest.raises(ValueError):
        stage1_loss(zero_net(2), x, np.zeros((1, 3)), 0.5)


def test_stage1_sum_over_draws():
    x = np.array([1.0, 2.0])
    eps = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    assert stage1_loss(identity_net(2), x, eps, 0.5) == pytest.approx(0.25 * (1 + 4 + 2))


def test_stage1_config_invariants():
    with pytest.raises(ValueError):
        Stage1Config(noise_level=0.0)
    with pytest.raises(ValueError):
        Stage1Config(kde_samples_per_point=0)
    with pytest.raises(ValueError):
        Stage1Config(learning_rate=-1.0)


@pytest.mark.parametrize("seed", range(5))
def test_stage1_training_reduces_loss(seed):
    data, _ = swiss_roll(500, rng=np.random.default_rng(seed))
    net = TimeConditionedNet.glorot(MlpSpec((2, 32, 2), "relu", True), np.random.default_rng(seed))
    res = train_stage1(data, Stage1Config(noise_level=0.1, epochs=50, learning_rate=1e-3), net,
                       np.random.default_rng(100 + seed))
    assert len(res.losses) == 50
    assert res.losses[-1] < res.losses[0]


def test_stage1_identity_at_small_noise():
    data, _ = swiss_roll(200, rng=np.random.default_rng(0))
    res = train_stage1(data, Stage1Config(noise_level=1e-6, epochs=3), identity_net(2), 0)
    # Adam still takes lr-sized steps on tiny gradients, so "near zero" is
    # judged against data of unit scale
    assert max(res.losses) < 1e-6


@pytest.mark.parametrize("shuffle", [True, False])
def test_stage1_shuffle_modes(shuffle):
    data, _ = swiss_roll(300, rng=np.random.default_rng(1))
    net = TimeConditionedNet.glorot(MlpSpec((2, 16, 2), "relu", True), np.random.default_rng(1))
    res = train_stage1(data, Stage1Config(epochs=20, learning_rate=3e-3), net, 2, shuffle)
    assert np.all(np.isfinite(res.losses))
    assert res.losses[-1] < res.losses[0]


def test_stage1_non_finite_loss():
    spec = MlpSpec((2, 2), "relu")
    net = TimeConditionedNet(spec, np.full(spec.n_params, 1e200))
    with pytest.raises(NumericError):
        with np.errstate(over="ignore", invalid="ignore"):
            train_stage1(np.ones((4, 2)) * 1e200, Stage1Config(epochs=1), net, 0)


# -- blur ------------------------------------------------------------------------

def test_kernel_properties():
    for b in (0.3, 0.5, 1.0, 2.7):
        k = BlurKernel(b)
        assert k.radius == math.ceil(3 * b)
        assert len(k.weights) == 2 * k.radius + 1
        assert math.fsum(k.weights) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        BlurKernel(0.0)


@settings(max_examples=30)
@given(st.floats(-5, 5), st.floats(0.1, 4.0), st.integers(1, 12), st.integers(1, 12))
def test_constant_image_fixed_point(c, b, h, w):
    img = np.full((h, w), c)
    out = gaussian_blur(img, b)
    assert np.array_equal(out, img)
    assert out.mean() == img.mean()


def test_delta_against_dense_oracle():
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    out = gaussian_blur(img, 1.0)
    w = BlurKernel(1.0).weights
    assert out[4, 4] == pytest.approx(w[3] ** 2, rel=1e-14)
    np.testing.assert_allclose(out, dense_blur(img, 1.0), atol=1e-15)


@pytest.mark.parametrize("b", [0.5, 0.8, 1.3])
def test_random_image_against_dense_oracle(b):
    img = np.random.default_rng(0).random((11, 8))
    np.testing.assert_allclose(gaussian_blur(img, b), dense_blur(img, b), atol=1e-14)


def test_stack_blur_matches_per_image():
    imgs = shapes_corpus(3, 12, np.random.default_rng(0))
    stacked = gaussian_blur(imgs, 0.7)
    for a, img in zip(stacked, imgs):
        assert np.array_equal(a, gaussian_blur(img, 0.7))


def test_double_blur_is_softer():
    imgs = shapes_corpus(50, 16, np.random.default_rng(3))
    for b in (0.5, 1.0):
        once = gaussian_blur(imgs, b)
        twice = gaussian_blur(once, b)
        for x1, x2 in zip(once, twice):
            assert sharpness(x2) <= sharpness(x1)


# -- stage 2 forward ---------------------------------------------------------------

@pytest.mark.parametrize("n", [0, 1, 4])
def test_zero_net_recursion(n):
    x_hat, its = stage2_forward(zero_net(3, 4), np.array([1.0, 2.0, 3.0]), n)
    assert np.all(x_hat == 0) and len(its) == n + 1


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.integers(0, 6))
def test_identity_recursion_fixed_point(x, n):
    x_hat, its = stage2_forward(identity_net(2, 2), np.array(x), n)
    for it in its:
        assert np.array_equal(it, x)


def test_hand_recursion():
    x_hat, its = stage2_forward(half_net(), np.array([1.0]), 2, Schedule.harmonic())
    assert [float(v[0]) for v in its] == [0.5, 0.5, 0.5]


def test_hand_recursion_with_external_target():
    # x0 = 0.5; x1 = 0.5 + (2 - 0.5)/2 = 1.25; x2 = 1.25 + 0.5 * (2 - 1.25)/2 = 1.4375
    _, its = stage2_forward(half_net(), np.array([1.0]), 2, target=np.array([2.0]))
    assert [float(v[0]) for v in its] == [0.5, 1.25, 1.4375]


def test_recursion_n0_and_zero_weights():
    rng = np.random.default_rng(0)
    net = TimeConditionedNet.glorot(MlpSpec((3, 8, 3), "tanh", True, 4), rng)
    x = rng.standard_normal(3)
    assert np.array_equal(stage2_forward(net, x, 0)[0], net(x, 0))
    # weights must be positive; the smallest subnormal acts as a_t = 0
    negligible = Schedule.custom(lambda k: 5e-324)
    out, _ = stage2_forward(net, x, 5, negligible)
    assert np.array_equal(out, net(x, 0))
    with pytest.raises(ValueError):
        stage2_forward(net, x, -1)


# -- stage 2 loss and gradient -------------------------------------------------------

def test_stage2_loss_trivial_cases():
    xc, xb = np.array([1.0, -1.0]), np.array([0.5, 0.2])
    lit = Stage2Config(loss_target="blurred_input")
    assert stage2_loss(identity_net(2, 2), xc, xb, lit) == 0.0
    assert stage2_loss(identity_net(2, 2), xc, xb, Stage2Config()) == pytest.approx(0.25 + 1.44)
    assert stage2_loss(zero_net(2, 2), xc, xb, Stage2Config()) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        stage2_loss(zero_net(2, 2), xc, np.zeros(3), Stage2Config())


@pytest.mark.parametrize("anchor", ["debiased", "input"])
@pytest.mark.parametrize("target", ["clean_data", "blurred_input"])
def test_unrolled_gradient(anchor, target):
    rng = np.random.default_rng(11)
    net = TimeConditionedNet.glorot(MlpSpec((3, 6, 3), "tanh", True, 4), rng)
    net.params = net.params + 0.1 * rng.standard_normal(net.spec.n_params)
    cfg = Stage2Config(n_steps=2, anchor=anchor, loss_target=target, corruption="noise")
    xc, xb = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    loss, grad = stage2_loss_and_grad(net, xc, xb, cfg)
    assert loss == pytest.approx(stage2_loss(net, xc, xb, cfg), rel=1e-12)

    def f(p):
        return stage2_loss(TimeConditionedNet(net.spec, p), xc, xb, cfg)

    assert max_relative_error(grad, central_differences(f, net.params, 1e-5)) < 1e-4


def test_stage2_config_invariants():
    with pytest.raises(ValueError):
        Stage2Config(n_steps=0)
    with pytest.raises(ValueError):
        Stage2Config(b_range=(1.0, 0.5))
    with pytest.raises(ValueError):
        Stage2Config(loss_target="other")
    with pytest.raises(ValueError):
        Stage2Config(corruption="jpeg")


def test_corruptions():
    x = np.ones((2, 4))
    rng = np.random.default_rng(0)
    aff = corrupt(x, Stage2Config(corruption="affine", affine_scale=0.1, affine_shift=1.0), rng)
    np.testing.assert_allclose(aff, 1.1)
    blurred = corrupt(np.ones((2, 16)), Stage2Config(), rng, (4, 4))
    np.testing.assert_array_equal(blurred, 1.0)
    with pytest.raises(ValueError):
        corrupt(x, Stage2Config(), rng)


def _shapes_net(seed, side=8):
    spec = MlpSpec((side * side, 64, side * side), "tanh", True, 8)
    return TimeConditionedNet.glorot(spec, np.random.default_rng(seed))


def test_fixed_bandwidth_matches_constant_loop():
    data = shapes_corpus(60, 8, np.random.default_rng(0)).reshape(60, -1)
    cfg = Stage2Config(b_range=(0.7, 0.7), epochs=2, batch_size=20, learning_rate=1e-3)
    res = train_stage2(data.reshape(60, 8, 8), cfg, _shapes_net(0), np.random.default_rng(5))

    # reference loop: same Adam, same shuffles, bandwidth fixed at 0.7
    from dkgm.nn import AdamState
    rng = np.random.default_rng(5)
    net = _shapes_net(0)
    opt = AdamState(lr=1e-3)
    for _ in range(2):
        order = rng.permutation(60)
        for s in range(0, 60, 20):
            xb = data[order[s:s + 20]]
            xin = gaussian_blur(xb.reshape(-1, 8, 8), 0.7).reshape(len(xb), -1)
            _, g = stage2_loss_and_grad(net, xb, xin, cfg)
            net.params = opt.update(net.params, g)
    assert np.array_equal(res.net.params, net.params)


@pytest.mark.parametrize("seed", range(5))
def test_shapes_training_reduces_loss(seed):
    imgs = shapes_corpus(200, 8, np.random.default_rng(seed))
    cfg = Stage2Config(n_steps=4, b_range=(0.5, 1.0), epochs=50, learning_rate=1e-3)
    res = train_stage2(imgs, cfg, _shapes_net(seed), np.random.default_rng(50 + seed))
    assert res.losses[-1] < res.losses[0]


def test_affine_variant_moves_toward_ground_truth():
    data, _ = swiss_roll(2000, rng=np.random.default_rng(0))
    test, _ = swiss_roll(500, rng=np.random.default_rng(1))
    cfg = Stage2Config(n_steps=10, corruption="affine", epochs=50, learning_rate=1e-2)
    net = TimeConditionedNet.glorot(MlpSpec((2, 32, 32, 2), "tanh", False, 8),
                                    np.random.default_rng(2))
    res = train_stage2(data, cfg, net, np.random.default_rng(3))
    inputs = affine_transform(test)
    out, _ = stage2_forward(res.net, inputs, 10)
    before = np.linalg.norm(inputs - test, axis=1).mean()
    after = np.linalg.norm(out - test, axis=1).mean()
    assert after < before


# -- sampling ---------------------------------------------------------------------------

def test_identity_pipeline_returns_input():
    model = DkgmModel(identity_net(2), identity_net(2, 4))
    x = np.array([0.3, -0.8])
    assert np.array_equal(dkgm_sample(model, x, 0.0, 4, rng=0), x)


def test_sampling_deterministic():
    rng = np.random.default_rng(0)
    f = TimeConditionedNet.glorot(MlpSpec((2, 8, 2), "relu", True), rng)
    u = TimeConditionedNet.glorot(MlpSpec((2, 8, 2), "relu", True, 4), rng)
    model = DkgmModel(f, u)
    a = dkgm_sample(model, np.ones((5, 2)), 0.5, 4, rng=42)
    b = dkgm_sample(model, np.ones((5, 2)), 0.5, 4, rng=42)
    assert np.array_equal(a, b)


def test_model_width_invariant():
    with pytest.raises(ValueError):
        DkgmModel(identity_net(2), identity_net(3))


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    model = DkgmModel(TimeConditionedNet.glorot(MlpSpec((2, 8, 2), "relu", True), rng),
                      TimeConditionedNet.glorot(MlpSpec((2, 8, 2), "tanh", True, 4), rng))
    path = tmp_path / "m.dkgm"
    save_model(path, model, {"stage": 2, "noise_level": 0.5, "n_steps": 4, "b_lo": 0.5,
                             "b_hi": 1.0})
    back, meta = load_model(path)
    assert meta == {"stage": 2.0, "noise_level": 0.5, "n_steps": 4.0, "b_lo": 0.5, "b_hi": 1.0}
    assert np.array_equal(back.f_theta.params, model.f_theta.params)
    assert back.u_gamma.spec == model.u_gamma.spec


def test_loss_csv(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_csv(path, [2.5, 1.25])
    assert path.read_text() == "epoch,mean_loss\n1,2.5\n2,1.25\n"


def _train_swissroll_dkgm(seed):
    data, _ = swiss_roll(5000, rng=np.random.default_rng(seed))
    f = TimeConditionedNet.glorot(MlpSpec((2, 64, 64, 2), "relu", True),
                                  np.random.default_rng(seed + 1))
    f = train_stage1(data, Stage1Config(noise_level=0.5, epochs=50, learning_rate=3e-3), f,
                     np.random.default_rng(seed + 2)).net
    u = TimeConditionedNet.glorot(MlpSpec((2, 64, 64, 2), "relu", True, 8),
                                  np.random.default_rng(seed + 3))
    cfg = Stage2Config(n_steps=4, anchor="input", corruption="noise", noise_std=0.1,
                       epochs=100, learning_rate=3e-3)
    u = train_stage2(data, cfg, u, np.random.default_rng(seed + 4)).net
    return DkgmModel(f, u)


def test_debiasing_improves_small_noise_samples():
    model = _train_swissroll_dkgm(0)
    seeds, _ = swiss_roll(1000, rng=np.random.default_rng(99))
    raw = model.f_theta.forward(seeds + 0.1 * np.random.default_rng(7).standard_normal(seeds.shape))
    samples = dkgm_sample(model, seeds, 0.1, 4, rng=np.random.default_rng(7))
    assert manifold_distance(samples) < manifold_distance(raw)
