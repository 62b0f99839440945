import numpy as np
import pytest

from vitalgan import gradcheck, nn
from vitalgan import tensor as T
from vitalgan.tensor import ShapeError, Tensor


def _params(**arrays):
    return nn.ParameterSet({k.replace("__", "."): Tensor(v, requires_grad=True) for k, v in arrays.items()})


def test_linear_identity_and_bias_only():
    x = np.array([[1.0, -2.0], [3.0, 4.0], [0.5, 0.0]])
    ps = _params(fc__weight=np.eye(2), fc__bias=np.zeros(2))
    np.testing.assert_array_equal(nn.linear_forward(ps, Tensor(x), "fc").data, x)
    ps = _params(fc__weight=np.zeros((2, 2)), fc__bias=np.array([1.0, 2.0]))
    np.testing.assert_array_equal(nn.linear_forward(ps, Tensor(x), "fc").data, [[1, 2]] * 3)


def test_linear_missing_parameter_and_shape_mismatch():
    with pytest.raises(KeyError, match="fc.weight"):
        nn.linear_forward(nn.ParameterSet(), Tensor(np.ones((1, 2))), "fc")
    ps = _params(fc__weight=np.ones((2, 3)), fc__bias=np.zeros(2))
    with pytest.raises(ShapeError):
        nn.linear_forward(ps, Tensor(np.ones((1, 2))), "fc")


def test_linear_weight_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))

    def f(w, b):
        return nn.linear_forward(nn.ParameterSet({"fc.weight": w, "fc.bias": b}), Tensor(x), "fc")

    assert gradcheck.check_gradient(f, [rng.standard_normal((2, 3)), rng.standard_normal(2)]) < 1e-4


def test_embedding_lookup_examples():
    ps = _params(emb__weight=np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(nn.embedding_lookup(ps, [0, 1], "emb").data, [[1, 0], [0, 1]])
    np.testing.assert_array_equal(nn.embedding_lookup(ps, [1, 1, 0], "emb").data, [[0, 1], [0, 1], [1, 0]])
    with pytest.raises(ValueError):
        nn.embedding_lookup(ps, [2], "emb")


def test_embedding_gradient_reaches_only_looked_up_rows():
    table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    ps = nn.ParameterSet({"emb.weight": table})
    (g,) = T.grad(T.tsum(nn.embedding_lookup(ps, [1, 1], "emb")), [table])
    np.testing.assert_array_equal(g.data, [[0, 0], [2, 2], [0, 0]])


def _lstm_params(features, hidden, layers=1, seed=0, scale=1.0):
    ps = nn.init_parameters(nn.lstm_param_specs("lstm", features, hidden, layers), seed)
    return nn.ParameterSet({k: Tensor(v.data * scale, requires_grad=True) for k, v in ps.entries.items()})


def test_lstm_zero_weights_output_zero():
    ps = _lstm_params(3, 4, scale=0.0)
    out = nn.lstm_forward(ps, Tensor(np.random.default_rng(0).standard_normal((2, 20, 3))), 4)
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def test_lstm_single_step_equals_cell_formula():
    rng = np.random.default_rng(1)
    ps = _lstm_params(3, 2, seed=1, scale=2.0)
    x = rng.standard_normal((4, 1, 3))
    gates = x[:, 0] @ ps["lstm.l0.weight_ih"].data.T + ps["lstm.l0.bias"].data
    i, f, g, o = np.split(gates, 4, axis=1)
    c = _sigmoid(i) * np.tanh(g)
    expected = _sigmoid(o) * np.tanh(c)
    np.testing.assert_allclose(nn.lstm_forward(ps, Tensor(x), 2).data, expected, rtol=1e-12)


def test_lstm_recurrence_matches_numpy_loop():
    rng = np.random.default_rng(2)
    ps = _lstm_params(2, 3, seed=2, scale=2.0)
    x = rng.standard_normal((2, 7, 2))
    w_ih, w_hh, b = (ps[f"lstm.l0.{n}"].data for n in ("weight_ih", "weight_hh", "bias"))
    h = np.zeros((2, 3))
    c = np.zeros((2, 3))
    for t in range(7):
        i, f, g, o = np.split(x[:, t] @ w_ih.T + h @ w_hh.T + b, 4, axis=1)
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
    np.testing.assert_allclose(nn.lstm_forward(ps, Tensor(x), 3).data, h, rtol=1e-12)


def test_lstm_gradients_through_20_steps():
    rng = np.random.default_rng(3)
    specs = nn.lstm_param_specs("lstm", 2, 2)
    ps = nn.init_parameters(specs, 3)
    names = [s.name for s in specs]
    x = rng.standard_normal((2, 20, 2))

    def f(*weights):
        return nn.lstm_forward(nn.ParameterSet(dict(zip(names, weights))), Tensor(x), 2)

    assert gradcheck.check_gradient(f, [ps[n].data * 3 for n in names]) < 1e-4


def test_lstm_feature_mismatch():
    with pytest.raises(ShapeError):
        nn.lstm_forward(_lstm_params(3, 2), Tensor(np.ones((1, 5, 4))), 2)


def test_init_is_deterministic_and_bounded():
    specs = [
        nn.ParamSpec("a.weight", (3, 4), "linear"),
        nn.ParamSpec("a.bias", (3,), "bias"),
        nn.ParamSpec("c.weight", (2, 4, 3), "conv"),
        nn.ParamSpec("e.weight", (2, 5), "embedding"),
    ]
    p1, p2 = nn.init_parameters(specs, 7), nn.init_parameters(specs, 7)
    assert p1.names() == p2.names() == [s.name for s in specs]
    for name in p1:
        assert p1[name].data.tobytes() == p2[name].data.tobytes()
    assert np.all(np.abs(p1["a.weight"].data) <= 0.5)  # fan_in 4
    assert np.all(np.abs(p1["c.weight"].data) <= np.sqrt(1 / 12))
    np.testing.assert_array_equal(p1["a.bias"].data, 0.0)
    assert all(p1[n].requires_grad for n in p1)


def test_init_weight_mean_is_near_zero():
    ps = nn.init_parameters([nn.ParamSpec("w.weight", (10_000, 1), "linear")], 0)
    assert abs(ps["w.weight"].data.mean()) < 0.02


def test_init_rejects_duplicate_names():
    spec = nn.ParamSpec("w.weight", (2, 2), "linear")
    with pytest.raises(ValueError):
        nn.init_parameters([spec, spec], 0)


def test_rmsprop_zero_gradient_leaves_parameters():
    ps = _params(w=np.array([1.0, -2.0]))
    nn.RMSprop(lr=0.1).step(ps, [np.zeros(2)])
    np.testing.assert_array_equal(ps["w"].data, [1.0, -2.0])


def test_rmsprop_first_step_by_hand():
    ps = _params(w=np.array([0.0]))
    opt = nn.RMSprop(lr=5e-5)
    opt.step(ps, [np.array([1.0])])
    assert opt.square_avg["w"][0] == pytest.approx(0.01)
    assert ps["w"].data[0] == pytest.approx(-5e-5 / (0.1 + 1e-8), rel=1e-12)
    assert ps["w"].data[0] == pytest.approx(-5e-4, rel=1e-6)


def test_rmsprop_descends_on_a_quadratic():
    ps = _params(theta=np.array([1.0]))
    opt = nn.RMSprop(lr=1e-3)
    values = []
    for _ in range(500):
        theta = ps["theta"]
        f = T.tsum(theta * theta)
        values.append(f.item())
        opt.step(ps, T.grad(f, [theta]))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_rmsprop_shape_mismatch_and_finite_updates():
    ps = _params(w=np.ones(3))
    with pytest.raises(ShapeError):
        nn.RMSprop().step(ps, [np.ones(2)])
    opt = nn.RMSprop(lr=1.0)
    for g in (np.zeros(3), np.array([1e-300, -1e150, 5.0])):
        opt.step(ps, [g])
        assert np.all(np.isfinite(ps["w"].data))
        assert np.all(opt.square_avg["w"] >= 0)
