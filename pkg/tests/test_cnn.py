import numpy as np
import pytest

from resight import rng
from resight.matchers.cnn import (
    PrimedCnnModel,
    forward_batch,
    loss_and_grads,
    loss_only,
    prepare_maps,
    primed_cnn_forward,
    primed_cnn_train,
)


def naive_forward(model, x):
    """Independent straightforward re-implementation of the forward pass."""

    def conv(inp, weights, bias):
        c_out, c_in, k, _ = weights.shape
        h, w = inp.shape[1:]
        padded = np.pad(inp, ((0, 0), (1, 1), (1, 1)))
        out = np.zeros((c_out, h, w))
        for f in range(c_out):
            for yy in range(h):
                for xx in range(w):
                    acc = bias[f]
                    for c in range(c_in):
                        for ky in range(k):
                            for kx in range(k):
                                acc += weights[f, c, ky, kx] * padded[c, yy + ky, xx + kx]
                    out[f, yy, xx] = acc
        return out

    r1 = np.maximum(conv(x, model.w1, model.b1), 0.0)
    r2 = np.maximum(conv(r1, model.w2, model.b2), 0.0)
    pooled = r2.mean(axis=(1, 2))
    z = pooled @ model.w3 + model.b3
    return 1.0 / (1.0 + np.exp(-z))


def random_input(seed):
    gen = rng.generator("cnn-input", seed)
    return gen.normal(size=(2, 32, 32))


def test_zero_model_outputs_half():
    model = PrimedCnnModel.zeros()
    assert primed_cnn_forward(model, np.zeros((32, 32)), np.zeros((32, 32))) == 0.5
    assert primed_cnn_forward(model, random_input(0)[0], random_input(0)[1]) == 0.5


def test_forward_is_deterministic():
    model = PrimedCnnModel.initialize(seed=3)
    x = random_input(3)
    assert primed_cnn_forward(model, x[0], x[1]) == primed_cnn_forward(model, x[0], x[1])


def test_parameter_count_is_fixed():
    assert PrimedCnnModel.initialize(seed=0).param_count == 745


@pytest.mark.parametrize("seed", range(3))
def test_forward_matches_naive_reimplementation(seed):
    model = PrimedCnnModel.initialize(seed=seed)
    x = random_input(seed)
    fast = forward_batch(model, x[None])[0]
    slow = naive_forward(model, x)
    assert fast == pytest.approx(slow, abs=1e-10)
    assert 0.0 < fast < 1.0


def test_gradient_check_fd_valid_triples():
    from helpers_gradcheck import make_triple, max_relative_error

    worst = 0.0
    for seed in range(5):  # the full 20-seed sweep runs in the acceptance suite
        worst = max(worst, max_relative_error(*make_triple(seed)))
    assert worst <= 1e-4


def test_gradient_check_small_step_random_operating_points():
    # Fully random models/inputs exercise live ReLU masks; a 1e-6 step
    # stays inside the smooth piece around the operating point.
    worst = 0.0
    for seed in range(3):
        model = PrimedCnnModel.initialize(seed=seed)
        x = random_input(seed)[None]
        y = np.array([float(seed % 2)])
        _, grads = loss_and_grads(model, x, y)
        for name, grad in grads.items():
            param = getattr(model, name)
            flat = param.reshape(-1)
            gen = rng.generator("gradcheck-pick", seed, name)
            picks = gen.choice(flat.size, size=min(10, flat.size), replace=False)
            for i in picks:
                step = 1e-6
                orig = flat[i]
                flat[i] = orig + step
                up = loss_only(model, x, y)
                flat[i] = orig - step
                down = loss_only(model, x, y)
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                analytic = grad.reshape(-1)[i]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
                worst = max(worst, rel)
    assert worst <= 1e-5


def test_shape_mismatch_raises():
    model = PrimedCnnModel.zeros()
    with pytest.raises(ValueError, match="resampled"):
        primed_cnn_forward(model, np.zeros((16, 16)), np.zeros((16, 16)))


def test_prepare_maps_resamples_to_grid():
    maps = prepare_maps(np.ones((48, 48)), np.zeros((48, 48)))
    assert maps.shape == (2, 32, 32)
    np.testing.assert_allclose(maps[0], 1.0)


def separable_training_set(n_per_class=24):
    pairs = []
    for seed in range(n_per_class):
        gen = rng.generator("cnn-toy", seed)
        pairs.append((0.02 * gen.normal(size=(32, 32)), 0.05 * gen.random((32, 32)), 1))
        pairs.append((0.5 + 0.05 * gen.normal(size=(32, 32)), 1.0 + 0.1 * gen.random((32, 32)), 0))
    return pairs


def test_training_separates_toy_classes():
    pairs = separable_training_set()
    model = primed_cnn_train(pairs, lr=0.2, epochs=50, batch=16, seed=0)
    preds = [primed_cnn_forward(model, d, e) for d, e, _ in pairs]
    labels = [label for _, _, label in pairs]
    accuracy = np.mean([(p > 0.5) == bool(y) for p, y in zip(preds, labels)])
    assert accuracy >= 0.98


def test_training_loss_decreases_with_full_batch():
    pairs = separable_training_set(n_per_class=12)
    model = primed_cnn_train(pairs, lr=0.1, epochs=25, batch=len(pairs), seed=1)
    diffs = np.diff(model.history)
    assert model.history[-1] < model.history[0]
    assert np.all(diffs <= 1e-6)  # non-strict after plateau


def test_zero_learning_rate_leaves_weights_unchanged():
    pairs = separable_training_set(n_per_class=4)
    trained = primed_cnn_train(pairs, lr=0.0, epochs=5, batch=4, seed=2)
    fresh = PrimedCnnModel.initialize(seed=2)
    for name, value in fresh.params().items():
        np.testing.assert_array_equal(getattr(trained, name), value)


def test_training_is_deterministic_under_seed():
    pairs = separable_training_set(n_per_class=6)
    m1 = primed_cnn_train(pairs, lr=0.05, epochs=5, batch=8, seed=9)
    m2 = primed_cnn_train(pairs, lr=0.05, epochs=5, batch=8, seed=9)
    for name in m1.params():
        np.testing.assert_array_equal(getattr(m1, name), getattr(m2, name))
    assert m1.history == m2.history


def test_single_class_input_raises():
    pairs = [(np.zeros((32, 32)), np.zeros((32, 32)), 1) for _ in range(4)]
    with pytest.raises(ValueError, match="both classes"):
        primed_cnn_train(pairs)
