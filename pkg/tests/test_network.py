import numpy as np
import pytest
import torch

from awa.errors import ArchiveError, NumericalError, ShapeError
from awa.network import (LayerSpec, NetworkModel, OptimizerState, batch_norm, build_discriminator,
                         build_generator, conv, dense, elu, forward, grad_step, load_model,
                         max_pool, predict, relu, save_model, tconv)


@pytest.mark.parametrize("length", [8, 16, 32, 2000])
def test_generator_shape(length):
    g = build_generator(length, seed=0)
    out = forward(g, np.zeros((2, length)))
    assert out.shape == (2, length)
    assert g.output_shape == (length,)
    assert np.all(out >= 0)


@pytest.mark.parametrize("length", [8, 16, 32, 2000])
@pytest.mark.parametrize("k", [1, 5])
def test_discriminator_shape(length, k):
    d = build_discriminator(length, k, seed=0)
    out = forward(d, np.random.default_rng(0).standard_normal((3, length)))
    assert out.shape == (3, k) if k > 1 else out.shape in ((3, 1), (3,))
    if k > 1:
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=1e-5)
    assert np.all((out >= 0) & (out <= 1))


def test_generator_length_must_divide_by_four():
    with pytest.raises(ShapeError):
        build_generator(30, seed=0)


def test_wrong_input_shape():
    with pytest.raises(ShapeError):
        forward(build_discriminator(16, 2, seed=0), np.zeros((1, 17)))


def test_hand_convolution():
    model = NetworkModel([conv(1, 3)], 3, dtype=torch.float64)
    with torch.no_grad():
        model.body[0].weight.fill_(1.0)
        model.body[0].bias.zero_()
    np.testing.assert_allclose(forward(model, [[1.0, 2.0, 3.0]]), [[3.0, 6.0, 5.0]])


def test_hand_transposed_convolution():
    # stride-2 upsampling of (1, 2) with a unit kernel of size 1 interleaves zeros
    model = NetworkModel([tconv(1, 1, 2)], 2, dtype=torch.float64)
    with torch.no_grad():
        model.body[0].weight.fill_(1.0)
        model.body[0].bias.zero_()
    np.testing.assert_allclose(forward(model, [[1.0, 2.0]]), [[1.0, 0.0, 2.0, 0.0]])


def test_hand_max_pool():
    model = NetworkModel([max_pool(2, 2)], 5, dtype=torch.float64)
    np.testing.assert_allclose(forward(model, [[1, -3, 4, 2, -5]]), [[1, 4, -5]])


def test_determinism_and_seed_sensitivity():
    a = build_discriminator(32, 3, seed=11)
    b = build_discriminator(32, 3, seed=11)
    c = build_discriminator(32, 3, seed=12)
    np.testing.assert_array_equal(a.parameter_vector(), b.parameter_vector())
    assert not np.array_equal(a.parameter_vector(), c.parameter_vector())
    x = np.random.default_rng(1).standard_normal((4, 32))
    np.testing.assert_array_equal(forward(a, x), forward(b, x))


def test_glorot_limits():
    model = NetworkModel([conv(4, 3)], 10, seed=3)
    w = model.body[0].weight.detach().numpy()
    limit = np.sqrt(6.0 / (3 * 1 + 3 * 4))
    assert np.all(np.abs(w) <= limit)
    assert np.abs(w).max() > limit / 2
    assert np.all(model.body[0].bias.detach().numpy() == 0)


# -- finite-difference gradient checks ----------------------------------------

GRAD_CASES = {
    "conv1d": ([conv(3, 3, 2)], 9),
    "transposed_conv1d": ([tconv(2, 3, 2)], 5),
    "batch_norm": ([conv(2, 3), batch_norm(0.8)], 6),
    "elu": ([conv(2, 3), elu(2.0)], 6),
    "relu": ([conv(2, 3), relu()], 6),
    "max_pool1d": ([conv(2, 3), max_pool(3, 2)], 7),
    "dense": ([dense(4)], 6),
    "softmax": ([dense(3), LayerSpec("softmax")], 5),
    "sigmoid": ([dense(1), LayerSpec("sigmoid")], 5),
}


def _scalar_loss(model, x, weights):
    return (model(x) * weights).sum()


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("kind", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(kind):
    layers, length = GRAD_CASES[kind]
    model = NetworkModel(layers, length, seed=5, dtype=torch.float64)
    model.train()
    rng = np.random.default_rng(2)
    x = torch.tensor(rng.standard_normal((4, length)), requires_grad=True)
    weights = torch.tensor(rng.standard_normal(tuple(model(x).shape)))
    model.zero_grad()
    _scalar_loss(model, x, weights).backward()
    analytic = np.concatenate([p.grad.numpy().ravel() for p in model.parameters()]
                              + [x.grad.numpy().ravel()])

    theta = model.parameter_vector()
    x0 = x.detach().numpy().copy()
    h = 1e-5

    def loss_at(params, xv):
        model.set_parameter_vector(params)
        with torch.no_grad():
            return float(_scalar_loss(model, torch.tensor(xv), weights))

    numeric = np.zeros(theta.size + x0.size)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        numeric[i] = (loss_at(theta + e, x0) - loss_at(theta - e, x0)) / (2 * h)
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e.flat[j] = h
        numeric[theta.size + j] = (loss_at(theta, x0 + e) - loss_at(theta, x0 - e)) / (2 * h)
    assert _rel_err(analytic, numeric) < 1e-4


# -- optimizer -----------------------------------------------------------------

def test_adam_first_step_matches_closed_form():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=torch.float64))
    p.grad = torch.tensor([0.5, -4.0], dtype=torch.float64)
    opt = OptimizerState(0.1)
    opt.apply([p])
    # after one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps')
    g = np.array([0.5, -4.0])
    lr_t = 0.1 * np.sqrt(1 - 0.999) / (1 - 0.9)
    expected = np.array([1.0, -2.0]) - lr_t * 0.1 * g / (np.sqrt(0.001) * np.abs(g) + 1e-7)
    np.testing.assert_allclose(p.detach().numpy(), expected, rtol=1e-12)
    assert opt.step == 1


def test_adam_descends_quadratic():
    model = NetworkModel([dense(3)], 4, seed=0, dtype=torch.float64)
    opt = OptimizerState(1e-2)
    losses = [grad_step(model, opt, lambda m, _: sum((q ** 2).sum() for q in m.parameters()), None)
              for _ in range(200)]
    assert losses[-1] < 0.1 * losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses[:50], losses[1:51]))


def test_zero_gradient_leaves_parameters():
    model = NetworkModel([dense(2)], 3, seed=0, dtype=torch.float64)
    before = model.parameter_vector()
    grad_step(model, OptimizerState(1e-2), lambda m, _: 0.0 * m(m.as_tensor(np.ones((1, 3)))).sum(), None)
    np.testing.assert_array_equal(model.parameter_vector(), before)


def test_non_finite_loss_raises():
    model = NetworkModel([dense(2)], 3, seed=0)
    with pytest.raises(NumericalError):
        grad_step(model, OptimizerState(1e-2),
                  lambda m, _: m(torch.ones(1, 3)).sum() * float("nan"), None)


# -- persistence ---------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    g = build_generator(16, seed=4)
    g.train()
    forward(g, np.random.default_rng(0).standard_normal((5, 16)), mode="train")
    save_model(g, tmp_path / "gen")
    loaded = load_model(tmp_path / "gen")
    assert loaded.layers == g.layers
    for (n1, a1), (n2, a2) in zip(g.state_arrays(), loaded.state_arrays()):
        assert n1 == n2
        np.testing.assert_array_equal(a1, a2)
    x = np.random.default_rng(1).standard_normal((3, 16))
    np.testing.assert_array_equal(forward(g, x), forward(loaded, x))


def test_train_mode_forward_updates_running_stats_only_in_train_mode():
    g = build_generator(8, seed=0)
    before = dict(g.state_arrays())["body.1.running_mean"].copy()
    forward(g, np.ones((4, 8)))
    np.testing.assert_array_equal(dict(g.state_arrays())["body.1.running_mean"], before)


def test_corrupt_model_rejected(tmp_path):
    save_model(build_discriminator(8, 2, seed=0), tmp_path / "d")
    blob = bytearray((tmp_path / "d.bin").read_bytes())
    blob[0] ^= 0xFF
    (tmp_path / "d.bin").write_bytes(bytes(blob))
    with pytest.raises(ArchiveError):
        load_model(tmp_path / "d")


def test_predict_chunks_agree():
    d = build_discriminator(16, 3, seed=0)
    x = np.random.default_rng(3).standard_normal((10, 16))
    np.testing.assert_allclose(predict(d, x, batch_size=3), forward(d, x), rtol=1e-6)
