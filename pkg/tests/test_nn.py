import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from peakshave.errors import (
    ConfigError,
    DegenerateWeighting,
    DivergenceError,
    ShapeError,
    StaleCache,
)
from peakshave.nn import (
    ACTIVATIONS,
    DenseLayer,
    Loss,
    Network,
    TrainConfig,
    WeightedMseConfig,
    backward,
    dimension_std,
    gradient_check,
    load_model,
    loss_mape,
    loss_mse,
    loss_weighted_mse,
    ratio_from_std,
    save_model,
    std_ratio,
    train,
)


def _net(sizes=(6, 4, 6), act="sigmoid", seed=0):
    return Network.initialize(list(sizes), act, np.random.default_rng(seed))


def _weighted(corrupted=(3, 4, 5), n=6, ratio=2.0):
    return WeightedMseConfig.from_ratio(corrupted, ratio, n)


# -- forward pass --------------------------------------------------------------

def test_forward_hand_example():
    layer1 = DenseLayer([[1.0, -1.0], [0.5, 0.5]], [0.0, 1.0], "relu")
    layer2 = DenseLayer([[2.0, 1.0]], [-1.0], "linear")
    net = Network([layer1, layer2])
    # hidden = relu([3-1, 1.5+0.5+1]) = [2, 3]; out = 4 + 3 - 1
    assert net.predict(np.array([3.0, 1.0])) == pytest.approx([6.0])
    batch = net.predict(np.array([[3.0, 1.0], [0.0, 2.0]]))
    # second row: hidden = relu([-2, 2]) = [0, 2]; out = 0 + 2 - 1
    np.testing.assert_allclose(batch[:, 0], [6.0, 1.0])


def test_sigmoid_layer_matches_formula():
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=(3, 5)), rng.normal(size=3)
    x = rng.normal(size=5)
    net = Network([DenseLayer(w, b, "sigmoid")])
    np.testing.assert_allclose(net.predict(x), 1 / (1 + np.exp(-(w @ x + b))), rtol=1e-14)


def test_network_shape_checks():
    with pytest.raises(ShapeError):
        Network([DenseLayer(np.ones((3, 2)), np.zeros(3)), DenseLayer(np.ones((1, 4)), np.zeros(1))])
    with pytest.raises(ShapeError):
        _net().forward(np.ones(5))
    with pytest.raises(ConfigError):
        DenseLayer(np.ones((1, 1)), np.zeros(1), "softsign")


def test_encode_returns_bottleneck():
    net = _net((6, 4, 2, 4, 6))
    assert net.encode(np.ones(6), 2).shape == (2,)
    assert net.encode(np.ones((3, 6)), 2).shape == (3, 2)


def test_parameters_round_trip():
    net = _net()
    other = _net(seed=5)
    other.set_parameters(net.parameters())
    assert other.same_parameters(net)


# -- losses against naive loops ------------------------------------------------------

@settings(max_examples=50)
@given(arrays(float, (3, 6), elements=st.floats(0.01, 10)), arrays(float, (3, 6), elements=st.floats(0, 10)))
def test_losses_match_loops(x, y):
    n = x.size
    mse = sum((x.flat[i] - y.flat[i]) ** 2 for i in range(n)) / n
    mape = 100 * sum(abs(x.flat[i] - y.flat[i]) / abs(x.flat[i]) for i in range(n)) / n
    assert loss_mse(x, y) == pytest.approx(mse, rel=1e-12, abs=1e-15)
    assert loss_mape(x, y) == pytest.approx(mape, rel=1e-12, abs=1e-15)
    cfg = _weighted()
    per_row = []
    for r in range(3):
        c = sum((x[r, j] - y[r, j]) ** 2 for j in cfg.corrupted) / 3
        k = sum((x[r, j] - y[r, j]) ** 2 for j in range(6) if j not in cfg.corrupted) / 3
        per_row.append(cfg.alpha * c + cfg.beta * k)
    assert loss_weighted_mse(x, y, cfg) == pytest.approx(sum(per_row) / 3, rel=1e-12, abs=1e-15)


def test_mape_epsilon_guard():
    assert loss_mape(np.zeros(2), np.array([1e-6, 0.0])) == pytest.approx(50.0)
    assert math.isfinite(loss_mape(np.zeros(3), np.ones(3)))


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_mse(np.ones(3), np.ones(4))


def test_weighted_equal_split_reduces_to_mse():
    # alpha = beta = 1/2 with equal group sizes is MSE
    cfg = WeightedMseConfig(0.5, 0.5, (0, 1, 2), 6)
    rng = np.random.default_rng(0)
    x, y = rng.random((4, 6)), rng.random((4, 6))
    assert loss_weighted_mse(x, y, cfg) == pytest.approx(loss_mse(x, y), rel=1e-12)


# -- weighting ratio ------------------------------------------------------------------

def test_ratio_uniform_std_is_one():
    alpha, beta = ratio_from_std(range(12), np.full(48, 0.3))
    assert alpha == beta == 0.5


def test_ratio_doubled_corrupted_equal_groups_is_two():
    std = np.r_[np.full(24, 2.0), np.full(24, 1.0)]
    alpha, beta = ratio_from_std(range(24), std)
    assert alpha + beta == 1.0
    assert alpha / beta == pytest.approx(2.0, abs=1e-12)
    assert beta == pytest.approx(1 / 3, abs=1e-12)


def test_ratio_group_size_normalization():
    # 1 corrupted dim with std 4, 3 others with std 1: means 4 vs 1
    assert std_ratio([0], [4.0, 1.0, 1.0, 1.0]) == pytest.approx(4.0, abs=1e-12)


@given(arrays(float, 48, elements=st.floats(1e-3, 1e3)), st.sets(st.integers(0, 47), min_size=1, max_size=47))
def test_ratio_sum_is_exactly_one(std, corrupted):
    alpha, beta = ratio_from_std(sorted(corrupted), std)
    assert alpha + beta == 1.0
    assert 0 < alpha < 1


def test_ratio_degenerate_cases():
    with pytest.raises(DegenerateWeighting):
        ratio_from_std([], np.ones(4))
    with pytest.raises(DegenerateWeighting):
        ratio_from_std(range(4), np.ones(4))
    with pytest.raises(DegenerateWeighting):
        ratio_from_std([0], [1.0, 0.0, 0.0])
    with pytest.raises(DegenerateWeighting):
        WeightedMseConfig(0.6, 0.5, (0,), 4)


def test_from_data_uses_sample_std():
    rng = np.random.default_rng(0)
    data = rng.random((10, 6)) * np.array([1, 1, 1, 3, 3, 3])
    cfg = WeightedMseConfig.from_data((3, 4, 5), data)
    std = np.std(data, axis=0, ddof=1)
    np.testing.assert_allclose(dimension_std(data), std)
    assert cfg.ratio == pytest.approx(std[3:].sum() / std[:3].sum(), rel=1e-12)
    assert cfg.sample_count == 10


def test_from_ratio_extremes():
    assert WeightedMseConfig.from_ratio([0], math.inf, 4).alpha == 1.0
    assert WeightedMseConfig.from_ratio([0], 0.0, 4).alpha == 0.0


# -- gradients -------------------------------------------------------------------------

@pytest.mark.parametrize("act", ACTIVATIONS)
@pytest.mark.parametrize("kind", ["mse", "mape", "weighted_mse"])
def test_gradient_check(act, kind):
    rng = np.random.default_rng(3)
    net = Network.initialize([6, 4, 6], [act, "sigmoid"], rng)
    x = rng.random((5, 6))
    target = rng.random((5, 6)) + 0.5
    loss = Loss(kind, weighted=_weighted() if kind == "weighted_mse" else None)
    assert gradient_check(net, x, target, loss) < 1e-5


def test_gradient_check_single_sample():
    net = _net((6, 3, 6), "tanh")
    x = np.linspace(0, 1, 6)
    assert gradient_check(net, x, x[::-1] + 0.1, Loss()) < 1e-5


def test_stale_cache_is_rejected():
    net = _net()
    x = np.ones((2, 6))
    _, cache = net.forward(x)
    net.apply_update(backward(net, cache, x, Loss()), 0.1)
    with pytest.raises(StaleCache):
        backward(net, cache, x, Loss())
    with pytest.raises(StaleCache):
        backward(net.copy(), net.forward(x)[1], x, Loss())


# -- training ----------------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters():
    net = _net()
    x = np.random.default_rng(0).random((20, 6))
    out, hist = train(net, x, x, TrainConfig(learning_rate=0.0, max_iterations=3))
    assert out.same_parameters(net)
    assert len(hist) == 3 and hist.train_loss[0] == pytest.approx(hist.train_loss[-1])


def test_train_does_not_mutate_input_network():
    net = _net()
    before = net.parameters()
    x = np.random.default_rng(0).random((20, 6))
    train(net, x, x, TrainConfig(max_iterations=2))
    np.testing.assert_array_equal(net.parameters(), before)


def test_linear_autoencoder_learns_identity():
    x = np.random.default_rng(0).normal(size=(200, 4))
    net = Network.initialize([4, 4], "linear", np.random.default_rng(1))
    out, hist = train(net, x, x, TrainConfig(learning_rate=0.1, max_iterations=500, batch_size=16))
    assert loss_mse(x, out.predict(x)) < 1e-3
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_training_is_deterministic():
    x = np.random.default_rng(0).random((40, 6))
    cfg = TrainConfig(learning_rate=0.5, max_iterations=5, batch_size=8, seed=4)
    a, ha = train(_net(), x, x, cfg)
    b, hb = train(_net(), x, x, cfg)
    assert a.same_parameters(b) and ha.train_loss == hb.train_loss
    c, _ = train(_net(), x, x, cfg.replace(seed=5))
    assert not a.same_parameters(c)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    x = np.random.default_rng(0).normal(size=(30, 4)) * 1e3
    net = Network.initialize([4, 4], "linear", np.random.default_rng(1))
    with pytest.raises(DivergenceError) as exc:
        train(net, x, x, TrainConfig(learning_rate=10.0, max_iterations=50))
    assert exc.value.iteration >= 1


def test_early_stopping_keeps_best():
    rng = np.random.default_rng(0)
    x = rng.random((40, 6))
    val = (rng.random((10, 6)), rng.random((10, 6)))
    cfg = TrainConfig(learning_rate=0.5, max_iterations=200, batch_size=8, early_stop_patience=3)
    net, hist = train(_net(), x, x, cfg, validation=val)
    assert len(hist) < 200
    assert Loss().value(val[1], net.predict(val[0])) <= min(hist.val_loss) + 1e-12


def test_history_csv():
    x = np.random.default_rng(0).random((10, 6))
    _, hist = train(_net(), x, x, TrainConfig(max_iterations=2), validation=(x, x))
    lines = hist.to_csv().splitlines()
    assert lines[0] == "iteration,train_loss,val_loss" and len(lines) == 3


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


# -- model files -----------------------------------------------------------------------------

def test_model_file_round_trip(tmp_path):
    net = _net((6, 4, 2, 4, 6))
    p = tmp_path / "m.json"
    save_model(p, net, {"note": "x"})
    back, meta = load_model(p)
    assert back.same_parameters(net) and meta == {"note": "x"}
    p2 = tmp_path / "m2.json"
    save_model(p2, back, {"note": "x"})
    assert p.read_bytes() == p2.read_bytes()


def test_model_file_format_check(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ConfigError):
        load_model(p)
