import numpy as np
import pytest

from aspm.nn import (
    AdamState, LayerSpec, ModelSpec, ShapeError, TrainConfig, TrainingError, adam_step, conv1d,
    copy_params, cross_entropy, dense, dropout, flatten, forward, init_params, layer_shapes,
    loss_and_grads, maxpool1d, param_count, relu, softmax, softmax_output, split_validation, train,
)
from aspm.models import build_spec


def toy_cnn():
    # same layer kinds and chaining as CNN-S, with tiny widths
    return ModelSpec((conv1d(2), relu(), maxpool1d(), conv1d(3), relu(), maxpool1d(),
                      conv1d(4), relu(), maxpool1d(), flatten(), dense(5), relu(), dropout(0.5),
                      softmax_output(2)))


def numeric_grads(params, spec, x, y, w, h=1e-5):
    out = []
    for p in params:
        if p is None:
            out.append(None)
            continue
        gs = []
        for t in p:
            g = np.zeros_like(t)
            it = np.nditer(t, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                old = t[i]
                t[i] = old + h
                lp = loss_and_grads(params, spec, x, y, w)[0]
                t[i] = old - h
                lm = loss_and_grads(params, spec, x, y, w)[0]
                t[i] = old
                g[i] = (lp - lm) / (2 * h)
            gs.append(g)
        out.append(tuple(gs))
    return out


def max_rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


# ---------------------------------------------------------------------------
# shapes and parameter counts
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("size,count", [("S", 166658), ("M", 413058), ("L", 1069186)])
def test_cnn_param_counts(size, count):
    assert param_count(build_spec("cnn", size)) == count


def test_cnn_lengths_floor_pool():
    shapes = layer_shapes(build_spec("cnn", "L"))
    lengths = [s[1][0] for s, layer in zip(shapes, build_spec("cnn", "L").layers)
               if layer.kind == "maxpool1d"]
    assert lengths == [30, 15, 7, 3, 1]


def test_bad_specs():
    with pytest.raises(ShapeError):
        ModelSpec((dense(3),))                           # no output layer
    with pytest.raises(ShapeError):
        ModelSpec((conv1d(4), softmax_output(2)))        # dense needs flat input
    with pytest.raises(ValueError):
        LayerSpec("dropout", rate=1.0)
    with pytest.raises(ValueError):
        LayerSpec("conv1d", size=4, kernel=4)


def test_spec_dict_round_trip():
    spec = build_spec("cnn", "M")
    assert ModelSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_identity_dense():
    spec = ModelSpec((dense(60), softmax_output(60)))
    params = [(np.eye(60), np.zeros(60)), (np.eye(60), np.zeros(60))]
    x = np.random.default_rng(0).standard_normal((4, 60))
    np.testing.assert_array_equal(forward(params, spec, x)[0], x)


def test_delta_kernel_conv_is_identity():
    spec = ModelSpec((conv1d(1), flatten(), softmax_output(60)))
    w = np.zeros((5, 1, 1))
    w[2, 0, 0] = 1.0
    params = [(w, np.zeros(1)), None, (np.eye(60), np.zeros(60))]
    x = np.random.default_rng(1).standard_normal((3, 60))
    np.testing.assert_allclose(forward(params, spec, x)[0], x, atol=1e-15)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(2)
    spec = ModelSpec((conv1d(3), flatten(), softmax_output(2)))
    params = init_params(spec, rng)
    params[0] = (rng.standard_normal((5, 1, 3)), rng.standard_normal(3))
    x = rng.standard_normal((2, 60))
    _, cache = forward(params, spec, x)
    got = cache.inputs[1]
    w, b = params[0]
    xp = np.pad(x, ((0, 0), (2, 2)))
    ref = np.zeros((2, 60, 3))
    for n in range(2):
        for i in range(60):
            for f in range(3):
                ref[n, i, f] = sum(xp[n, i + j] * w[j, 0, f] for j in range(5)) + b[f]
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_zero_input_zero_bias_cnn_s():
    spec = build_spec("cnn", "S")
    params = init_params(spec, np.random.default_rng(0))
    logits, _ = forward(params, spec, np.zeros((1, 60)))
    np.testing.assert_array_equal(logits, [[0.0, 0.0]])
    np.testing.assert_array_equal(softmax(logits), [[0.5, 0.5]])


def test_eval_forward_deterministic_and_dropout_training_only():
    spec = build_spec("mlp", "S")
    params = init_params(spec, np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal((8, 60))
    a = forward(params, spec, x)[0]
    np.testing.assert_array_equal(a, forward(params, spec, x)[0])
    t1 = forward(params, spec, x, training=True, rng=np.random.default_rng(5))[0]
    assert not np.array_equal(a, t1)


def test_forward_shape_error():
    spec = build_spec("mlp", "S")
    params = init_params(spec, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(params, spec, np.zeros((2, 59)))


def test_softmax_and_cross_entropy():
    logits = np.random.default_rng(6).standard_normal((50, 2)) * 10
    np.testing.assert_allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-12)
    assert np.all(cross_entropy(logits, np.zeros(50, int)) >= 0)
    np.testing.assert_allclose(cross_entropy(np.zeros((3, 2)), np.array([0, 1, 0])), np.log(2))
    assert cross_entropy(np.array([[30.0, -30.0]]), np.array([0]))[0] < 1e-3


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_gradient_check_toy_cnn():
    rng = np.random.default_rng(7)
    spec = toy_cnn()
    params = init_params(spec, rng)
    params = [None if p is None else (p[0], rng.normal(0, 0.1, p[1].shape)) for p in params]
    x = rng.standard_normal((6, 60))
    y = np.array([0, 1, 1, 0, 1, 0])
    w = rng.uniform(0.2, 1.0, 6)
    _, grads = loss_and_grads(params, spec, x, y, w)
    num = numeric_grads(params, spec, x, y, w)
    for g, n in zip(grads, num):
        if g is None:
            continue
        for a, b in zip(g, n):
            assert max_rel_err(a, b) < 1e-4


def test_gradient_check_mlp():
    rng = np.random.default_rng(8)
    spec = ModelSpec((dense(7), relu(), dense(4), relu(), softmax_output(2)))
    # non-zero biases keep every pre-activation off the ReLU kink at 0
    params = [None if p is None else (p[0], rng.normal(0, 0.1, p[1].shape))
              for p in init_params(spec, rng)]
    x = rng.standard_normal((5, 60))
    y = np.array([1, 0, 1, 1, 0])
    _, grads = loss_and_grads(params, spec, x, y)
    for g, n in zip(grads, numeric_grads(params, spec, x, y, None)):
        if g is not None:
            for a, b in zip(g, n):
                assert max_rel_err(a, b) < 1e-4


def test_zero_weight_sample_has_no_gradient_effect():
    rng = np.random.default_rng(9)
    spec = build_spec("mlp", "S")
    params = init_params(spec, rng)
    x = rng.standard_normal((4, 60))
    y = np.array([0, 1, 0, 1])
    _, g_full = loss_and_grads(params, spec, x, y, np.array([1.0, 1.0, 1.0, 0.0]))
    _, g_sub = loss_and_grads(params, spec, x[:3], y[:3])
    # the weighted mean divides by the full batch size
    for a, b in zip(g_full, g_sub):
        if a is not None:
            np.testing.assert_allclose(a[0] * 4 / 3, b[0], atol=1e-14)


def test_loss_descends_full_batch_small_lr():
    rng = np.random.default_rng(10)
    spec = toy_cnn()
    params = init_params(spec, rng)
    x = rng.standard_normal((32, 60))
    y = rng.integers(0, 2, 32)
    cfg = TrainConfig(learning_rate=1e-4)
    state = AdamState.zeros_like(params)
    losses = []
    for t in range(1, 11):
        loss, g = loss_and_grads(params, spec, x, y)
        losses.append(loss)
        adam_step(params, g, state, t, cfg)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

def test_adam_first_step_by_hand():
    cfg = TrainConfig()
    params = [(np.zeros((1, 1)), np.zeros(1))]
    grads = [(np.ones((1, 1)), np.zeros(1))]
    state = AdamState.zeros_like(params)
    adam_step(params, grads, state, 1, cfg)
    m_hat = (0.1 * 1.0) / (1 - 0.9)
    v_hat = (0.001 * 1.0) / (1 - 0.999)
    expected = -0.001 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert params[0][0][0, 0] == pytest.approx(expected, abs=1e-15)
    assert params[0][0][0, 0] == pytest.approx(-0.001, rel=1e-5)
    assert params[0][1][0] == 0.0


def test_adam_two_steps_by_hand():
    cfg = TrainConfig(learning_rate=0.01)
    p = [(np.array([[0.5]]), np.zeros(1))]
    st = AdamState.zeros_like(p)
    m = v = 0.0
    ref = 0.5
    for t, g in enumerate([0.3, -1.2], start=1):
        adam_step(p, [(np.array([[g]]), np.zeros(1))], st, t, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p[0][0][0, 0] == pytest.approx(ref, abs=1e-15)


def test_adam_rejects_t0():
    p = [(np.zeros((1, 1)), np.zeros(1))]
    with pytest.raises(ValueError):
        adam_step(p, p, AdamState.zeros_like(p), 0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def separable(n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 60)) * 0.5
    x[:, 10] += np.where(y == 1, 2.0, -2.0)
    return x, y


def test_split_validation_last_fraction():
    tr, va = split_validation(10, 0.3)
    np.testing.assert_array_equal(va, [7, 8, 9])
    np.testing.assert_array_equal(tr, np.arange(7))


def test_mlp_learns_separable_set():
    x, y = separable()
    # margin oracle: the construction is separable by the sign of feature 10 up to noise
    assert np.mean((x[:, 10] > 0) == (y == 1)) > 0.99
    rep = train(build_spec("mlp", "S"), x, y, TrainConfig(batch_size=100, epochs=50, seed=1))
    assert max(rep.val_kappa) >= 0.95
    assert rep.val_kappa[rep.best_epoch - 1] == max(rep.val_kappa)
    assert len(rep.train_loss) == 50


def test_train_deterministic():
    x, y = separable(200)
    cfg = TrainConfig(batch_size=50, epochs=3, seed=4)
    a = train(build_spec("mlp", "S"), x, y, cfg)
    b = train(build_spec("mlp", "S"), x, y, cfg)
    for p, q in zip(a.final_params, b.final_params):
        if p is not None:
            np.testing.assert_array_equal(p[0], q[0])


def test_zero_weight_data_identical_trajectory():
    x, y = separable(300, seed=2)
    extra_x, extra_y = separable(100, seed=3)
    cfg = TrainConfig(batch_size=64, epochs=4, seed=5)
    spec = build_spec("mlp", "S")
    # validation taken explicitly so both runs see the same held-out data
    val = (x[200:], y[200:])
    base = train(spec, x[:200], y[:200], cfg, validation=val)
    mixed = train(spec, np.r_[x[:200], extra_x], np.r_[y[:200], extra_y], cfg,
                  sample_weight=np.r_[np.ones(200), np.zeros(100)], validation=val)
    for p, q in zip(base.final_params, mixed.final_params):
        if p is not None:
            np.testing.assert_allclose(p[0], q[0], atol=1e-9, rtol=0)
            np.testing.assert_allclose(p[1], q[1], atol=1e-9, rtol=0)


def test_train_errors():
    x, y = separable(100)
    with pytest.raises(TrainingError):
        train(build_spec("mlp", "S"), x, y, TrainConfig(epochs=0))
    y_bad = y.copy()
    y_bad[70:] = 1
    with pytest.raises(TrainingError):
        train(build_spec("mlp", "S"), x, y_bad, TrainConfig(epochs=1))


def test_init_params_used_and_not_mutated():
    x, y = separable(100)
    spec = build_spec("mlp", "S")
    init = init_params(spec, np.random.default_rng(0))
    keep = copy_params(init)
    train(spec, x, y, TrainConfig(epochs=1, batch_size=50), init=init)
    np.testing.assert_array_equal(init[0][0], keep[0][0])
