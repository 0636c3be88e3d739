import math

import numpy as np
import pytest

from eventsuffix import autodiff as ad
from eventsuffix import train as tr
from eventsuffix.autodiff import Tape, Tensor, finite_difference_check
from eventsuffix.eventlog import PrefixSuffixPair, encode_event
from eventsuffix.nn import DiscriminatorModel, GeneratorModel, discriminate, smooth_real_suffix
from eventsuffix.train import (
    ADV_PROB_FLOOR,
    RmsProp,
    RmsPropState,
    TrainConfig,
    anneal_temperature,
    clip_by_layer,
    discriminator_loss,
    fit,
    generator_adversarial_loss,
    rmsprop_update,
    supervised_loss,
)

from helpers import synthetic_splits


def _pair(m, activities, days, k=2):
    prefix = np.stack([encode_event(2, 0.0, m), encode_event(2, 0.5, m)][:k])
    suffix = np.stack([encode_event(a, d, m) for a, d in zip(activities, days)])
    return PrefixSuffixPair("c", k, prefix, suffix, tuple(activities), tuple(days))


class StubGenerator:
    def __init__(self, pis, ts):
        self.pis, self.ts = pis, ts

    def rollout(self, prefix, steps, targets=None, teacher=None):
        assert steps == len(self.pis)
        return [Tensor(p) for p in self.pis], [Tensor(t) for t in self.ts]


@pytest.fixture(scope="module")
def splits():
    return synthetic_splits(n_traces=40, seed=5)


# -- losses ------------------------------------------------------------------


def test_single_step_loss_is_log_two():
    G = StubGenerator([[0.25, 0.5, 0.25]], [0.0])
    total, act, tim = supervised_loss(G, _pair(3, [1], [0.0]))
    assert total.item() == pytest.approx(math.log(2), abs=1e-12)
    assert tim.item() == 0.0


def test_time_loss_of_summed_durations():
    pis = [[0, 0, 0, 1.0], [0, 1.0, 0, 0]]
    G = StubGenerator(pis, [1.0, 2.0])
    total, act, tim = supervised_loss(G, _pair(4, [3, 1], [2.0, 2.0]))
    assert tim.item() == 1.0
    assert total.item() == 1.0


def test_loss_weights():
    G = StubGenerator([[0.25, 0.5, 0.25]], [1.0])
    total, _, _ = supervised_loss(G, _pair(3, [1], [0.0]), w_a=2.0, w_t=3.0)
    assert total.item() == pytest.approx(2 * math.log(2) + 3.0, abs=1e-12)


def test_zero_probability_truth_is_floored():
    G = StubGenerator([[0.0, 0.0, 1.0]], [0.0])
    total, _, _ = supervised_loss(G, _pair(3, [1], [0.0]))
    assert total.item() == pytest.approx(-math.log(1e-12))


def test_supervised_loss_gradient_tiny_net():
    m = 5
    G = GeneratorModel(m, 3, 1, seed=2)
    pair = _pair(m, [2, 4, 1], [0.3, 0.2, 0.0])
    rng = np.random.default_rng(0)
    params = {k: v + rng.normal(scale=0.3, size=v.shape) for k, v in G.arrays().items()}
    params["time_head.b"] = np.array([1.0])
    teacher = np.ones(3, dtype=bool)
    f = lambda p: supervised_loss(G.with_params(p), pair, teacher)[0]
    assert finite_difference_check(f, params, 1e-5) < 1e-4


def test_discriminator_loss_at_half():
    half = Tensor(0.5)
    assert discriminator_loss(half, half).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert generator_adversarial_loss(half).item() == pytest.approx(0.0, abs=1e-12)


def test_generator_loss_floor_when_discriminator_saturates():
    loss = generator_adversarial_loss(Tensor(1.0)).item()
    assert loss == pytest.approx(math.log(ADV_PROB_FLOOR), rel=1e-6)
    assert math.isfinite(discriminator_loss(Tensor(0.0), Tensor(1.0)).item())


def test_discriminator_loss_matches_hand_formula():
    m = 4
    D = DiscriminatorModel(m, 5, 1, seed=3)
    real = smooth_real_suffix(_pair(m, [2, 3, 1], [0.2, 0.1, 0.0]).suffix, m)
    fake = np.abs(np.random.default_rng(1).normal(size=(3, m + 1)))
    dr, df = discriminate(D, real).item(), discriminate(D, fake).item()
    expected = -math.log(dr) - math.log(1 - df)
    assert discriminator_loss(discriminate(D, real), discriminate(D, fake)).item() == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("point", range(3))
def test_adversarial_losses_gradients(point):
    m = 4
    rng = np.random.default_rng([31, point])
    D = DiscriminatorModel(m, 3, 1, seed=point)
    real = smooth_real_suffix(_pair(m, [2, 3, 1], [0.2, 0.1, 0.0]).suffix, m)
    fake = rng.uniform(0.05, 1.0, size=(3, m + 1))
    params = {k: v + rng.normal(scale=0.3, size=v.shape) for k, v in D.arrays().items()}
    fd = lambda p: discriminator_loss(discriminate(D.with_params(p), real), discriminate(D.with_params(p), fake))
    assert finite_difference_check(fd, params, 1e-5) < 1e-4
    fg = lambda p: generator_adversarial_loss(discriminate(D, [p["x"][i] for i in range(3)]))
    assert finite_difference_check(fg, {"x": fake}, 1e-5) < 1e-4


def test_one_discriminator_step_does_not_increase_its_loss():
    m = 5
    G = GeneratorModel(m, 4, 1, seed=0)
    D = DiscriminatorModel(m, 4, 1, seed=1)
    pair = _pair(m, [2, 4, 1], [0.3, 0.2, 0.0])
    noise = np.random.default_rng(0).gumbel(size=(3, m))
    real = smooth_real_suffix(pair.suffix, m)
    fake = [Tensor(e.data) for e in tr.fake_suffix(G, pair.prefix, 3, 0.9, noise)]

    def loss():
        return discriminator_loss(discriminate(D, real), discriminate(D, fake))

    with Tape() as tape:
        before = loss()
    RmsProp(D, 1e-6, 1.0).step(ad.backward(before, tape, D.params))
    assert loss().item() <= before.item()


def test_adversarial_step_updates_both_models_once():
    m = 5
    G = GeneratorModel(m, 4, 1, seed=0)
    D = DiscriminatorModel(m, 4, 1, seed=1)
    opt_g, opt_d = RmsProp(G, 1e-3, 1.0), RmsProp(D, 1e-3, 1.0)
    g0, d0 = G.clone().arrays(), D.clone().arrays()
    d_loss, g_loss = tr.adversarial_step(G, D, _pair(m, [2, 4, 1], [0.3, 0.2, 0.0]), 0.5, opt_g, opt_d,
                                         np.random.default_rng(0))
    assert math.isfinite(d_loss) and math.isfinite(g_loss)
    assert (opt_g.updates, opt_d.updates) == (1, 1)
    assert any(not np.array_equal(g0[k], G.params[k].data) for k in g0)
    assert any(not np.array_equal(d0[k], D.params[k].data) for k in d0)


# -- optimizer ---------------------------------------------------------------


def test_rmsprop_hand_calculation():
    params = {"p": np.array([0.0])}
    state = RmsPropState()
    rmsprop_update(params, {"p": np.array([1.0])}, state, lr=5e-5, clip_norm=1.0)
    assert state.v["p"][0] == pytest.approx(0.1, abs=1e-15)
    assert params["p"][0] == pytest.approx(-5e-5 / math.sqrt(0.1 + 1e-8), rel=1e-12)
    assert params["p"][0] == pytest.approx(-1.5811e-4, abs=1e-8)


def test_clip_scales_layer_norm_to_one():
    grads = {"l.W": np.array([[2.0, 0.0]]), "l.b": np.array([0.0, 2.0 * math.sqrt(3)])}
    clipped, norms = clip_by_layer(grads, {"l": ["l.W", "l.b"]}, 1.0)
    assert norms["l"] == pytest.approx(1.0, abs=1e-12)
    assert math.sqrt(sum(np.sum(g ** 2) for g in clipped.values())) == pytest.approx(1.0, abs=1e-12)


def test_small_gradients_are_not_clipped():
    grads = {"a": np.array([0.3, 0.4])}
    clipped, norms = clip_by_layer(grads, {"a": ["a"]}, 1.0)
    assert np.array_equal(clipped["a"], grads["a"])


def test_zero_gradient_leaves_parameters_unchanged():
    params = {"p": np.array([1.5, -2.0])}
    rmsprop_update(params, {"p": np.zeros(2)}, RmsPropState(), lr=1e-2, clip_norm=1.0)
    np.testing.assert_array_equal(params["p"], [1.5, -2.0])


def test_non_finite_gradient_rejected():
    with pytest.raises(ad.NonFiniteError):
        rmsprop_update({"p": np.zeros(1)}, {"p": np.array([np.inf])}, RmsPropState(), 1e-3, 1.0)


def test_every_update_respects_clip():
    rng = np.random.default_rng(0)
    G = GeneratorModel(5, 4, 2, seed=0)
    opt = RmsProp(G, 1e-3, 1.0)
    for _ in range(5):
        opt.step({k: rng.normal(scale=10.0, size=v.shape) for k, v in G.arrays().items()})
        assert max(opt.last_norms.values()) <= 1.0 + 1e-9
    assert all(np.all(v >= 0) for v in opt.state.v.values())


# -- schedule and config -----------------------------------------------------


def test_temperature_schedule():
    config = TrainConfig(iterations=500)
    assert anneal_temperature(0, config) == 0.9
    assert anneal_temperature(500, config) == pytest.approx(0.05, rel=1e-12)
    taus = [anneal_temperature(i, config) for i in range(600)]
    assert all(b <= a for a, b in zip(taus, taus[1:]))
    assert min(taus) >= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="gan")
    with pytest.raises(ValueError):
        TrainConfig(teacher_forcing_ratio=1.5)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lr": 1.0})


def test_config_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("mode: MLMME\niterations: 7\nlearning_rate: 0.001\n")
    config = TrainConfig.load(path, seed=3)
    assert (config.mode, config.iterations, config.learning_rate, config.seed) == ("mlmme", 7, 1e-3, 3)
    assert TrainConfig.from_dict(config.to_dict()) == config


def test_paper_defaults():
    c = TrainConfig()
    assert (c.iterations, c.patience, c.learning_rate, c.clip_norm, c.teacher_forcing_ratio) == (500, 30, 5e-5, 1.0, 0.1)
    assert (c.hidden_size, c.num_layers, c.rho, c.eps) == (200, 5, 0.9, 1e-8)


# -- training loop -----------------------------------------------------------


def test_constant_validation_stops_after_patience(splits, monkeypatch):
    _, _, (train, val, _) = splits
    monkeypatch.setattr(tr, "validation_loss", lambda G, pairs, config: 1.0)
    config = tr.desk_profile(iterations=100, patience=30, hidden_size=2)
    _, report = fit(GeneratorModel(6, 2, 1), train[:2], val[:1], config)
    assert len(report.records) == 31
    assert report.stopped_early and report.best_iteration == 1


def test_fit_returns_best_validation_parameters(splits, monkeypatch):
    _, _, (train, val, _) = splits
    values = iter([3.0, 1.0, 2.0, 2.5])
    snapshots = []

    def fake_validation(G, pairs, config):
        snapshots.append(G.clone())
        return next(values)

    monkeypatch.setattr(tr, "validation_loss", fake_validation)
    best, report = fit(GeneratorModel(6, 2, 1), train[:2], val[:1], tr.desk_profile(iterations=4, hidden_size=2))
    assert report.best_iteration == 2
    for k, v in best.params.items():
        assert np.array_equal(v.data, snapshots[1].params[k].data)


def test_fit_is_deterministic(splits):
    _, _, (train, val, _) = splits
    config = tr.desk_profile(iterations=2, hidden_size=4, mode="mlmme")
    runs = [fit(GeneratorModel(6, 4, 1, seed=0), train[:4], val[:2], config) for _ in range(2)]
    assert runs[0][1].to_csv() == runs[1][1].to_csv()
    for k in runs[0][0].params:
        assert np.array_equal(runs[0][0].params[k].data, runs[1][0].params[k].data)


def test_update_counts_per_mode(splits):
    _, _, (train, val, _) = splits
    for mode, expected in (("mle", (0, 1)), ("mlmme", (1, 2))):
        config = tr.desk_profile(iterations=1, hidden_size=4, mode=mode)
        _, report = fit(GeneratorModel(6, 4, 1), train[:3], val[:1], config)
        r = report.records[0]
        assert (r.d_updates, r.g_updates) == (3 * expected[0], 3 * expected[1])
        if mode == "mle":
            assert r.d_loss is None and r.tau is None
        else:
            assert math.isfinite(r.d_loss) and math.isfinite(r.g_adv_loss) and r.tau == 0.9


@pytest.mark.parametrize("ratio", [0.0, 1.0])
def test_teacher_forcing_extremes_run(splits, ratio):
    _, _, (train, val, _) = splits
    config = tr.desk_profile(iterations=1, hidden_size=4, teacher_forcing_ratio=ratio)
    _, report = fit(GeneratorModel(6, 4, 1), train[:2], val[:1], config)
    assert math.isfinite(report.records[0].supervised_loss)


def test_divergence_aborts_with_report(splits, monkeypatch):
    _, _, (train, val, _) = splits
    calls = {"n": 0}

    def exploding(G, pairs, config):
        calls["n"] += 1
        return 1.0 if calls["n"] < 2 else math.nan

    monkeypatch.setattr(tr, "validation_loss", exploding)
    with pytest.raises(tr.TrainingDiverged) as info:
        fit(GeneratorModel(6, 2, 1), train[:1], val[:1], tr.desk_profile(iterations=5, hidden_size=2))
    assert len(info.value.report.records) == 1


def test_mle_loss_decreases_early():
    _, _, (train, val, _) = synthetic_splits(n_traces=30, seed=9)
    train = train[:20]
    good = 0
    for seed in range(10):
        config = tr.desk_profile(iterations=10, hidden_size=8, seed=seed)
        _, report = fit(GeneratorModel(6, 8, 1, seed=seed), train, val[:1], config)
        losses = [r.supervised_loss for r in report.records]
        good += all(b < a for a, b in zip(losses, losses[1:]))
    assert good >= 9


def test_loss_report_csv_columns(splits):
    _, _, (train, val, _) = splits
    _, report = fit(GeneratorModel(6, 2, 1), train[:1], val[:1], tr.desk_profile(iterations=1, hidden_size=2))
    header, row = report.to_csv().splitlines()
    assert header.split(",") == list(tr.REPORT_COLUMNS)
    assert "np." not in row
    assert report.summary()["iterations_run"] == 1
