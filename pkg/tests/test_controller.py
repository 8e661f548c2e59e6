import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from hetnet.campaign import ExperimentConfig, experiment_unit
from hetnet.channel import ChannelConfig
from hetnet.controller import (
    ControllerConfig, ExperimentLog, build_context, kpi_invert, make_environment,
    normalize_loads, read_log_csv, run_experiment, softmax_features,
)
from hetnet.predictors import ModelSpec

SMALL = ControllerConfig(T_e=40, horizon=24)
FAST_NN = ModelSpec("NN", nn_hidden=(8,), nn_epochs=20)


@pytest.mark.parametrize("air,kpi", [(100.0, 0.0), (20.0, 80.0), (0.0, 100.0)])
def test_kpi_invert(air, kpi):
    assert kpi_invert(air) == kpi


def test_kpi_invert_range():
    with pytest.raises(ValueError):
        kpi_invert(101.0)
    with pytest.raises(ValueError):
        kpi_invert(-0.5)


def test_softmax_examples():
    ones = np.ones(4)
    assert np.allclose(softmax_features(ones * 5, ones * 0, ones * 10), 0.25)
    out = softmax_features([1.0, 0, 0, 0], np.zeros(4), np.ones(4))
    e = math.e
    assert np.allclose(out, [e / (e + 3), 1 / (e + 3), 1 / (e + 3), 1 / (e + 3)])
    assert np.allclose(out, [0.4754, 0.1749, 0.1749, 0.1749], atol=1e-4)


def test_normalize_degenerate_station():
    assert np.array_equal(normalize_loads([3.0, 5.0], [3.0, 0.0], [3.0, 10.0]), [0.0, 0.5])
    with pytest.raises(ValueError):
        normalize_loads([1.0], [2.0], [1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.floats(-20, 20))
def test_softmax_shift_invariance(z, c):
    from hetnet.controller import softmax
    a, b = softmax(z), softmax(np.array(z) + c)
    assert np.allclose(a, b, atol=1e-12)
    assert np.all(a >= 0) and a.sum() == pytest.approx(1.0)


def _loads(rng, C=4):
    return rng.uniform(0, 40, (C, 2))


def test_no_offload_context():
    rng = np.random.default_rng(0)
    c = build_context(_loads(rng), np.zeros((4, 2)), None, 1, SMALL, np.zeros((4, 2)),
                      np.full((4, 2), 40.0))
    assert np.all(c.l_down == 0) and np.all(c.l_up == 0)
    assert c.w_down.sum() == pytest.approx(1) and c.w_up.sum() == pytest.approx(1)
    assert c.position == 1 and c.position_onehot.sum() == 1


def test_offloaded_entry_boosted():
    rng = np.random.default_rng(1)
    wifi, lifi = _loads(rng), np.zeros((4, 2))
    lifi[2] = wifi[2]
    wifi[2] = 0
    mins, maxs = np.zeros((4, 2)), np.full((4, 2), 40.0)
    c = build_context(wifi, lifi, 2, 2, SMALL, mins, maxs)
    share = softmax_features(np.where(np.arange(4)[:, None] == 2, lifi, wifi)[:, 1], mins[:, 1],
                             maxs[:, 1])
    assert c.w_down[2] == 0.0
    assert c.l_down[2] == pytest.approx(3.5 * share[2])
    # each block sums to one once the LiFi boost is divided out
    assert c.w_down.sum() + c.l_down.sum() / 3.5 == pytest.approx(1.0)


def test_hysteresis_one_is_unboosted():
    rng = np.random.default_rng(2)
    wifi, lifi = _loads(rng), np.zeros((4, 2))
    lifi[0], wifi[0] = wifi[0], 0
    cfg = ControllerConfig(h_lifi=1.0)
    c = build_context(wifi, lifi, 0, 0, cfg, np.zeros((4, 2)), np.full((4, 2), 40.0))
    assert c.l_down[0] == c.share_down[0] and c.l_up[0] == c.share_up[0]


def test_context_projection_matches_measured_state():
    rng = np.random.default_rng(3)
    wifi, lifi = _loads(rng), np.zeros((4, 2))
    lifi[1], wifi[1] = wifi[1], 0
    c = build_context(wifi, lifi, 1, 1, SMALL, np.zeros((4, 2)), np.full((4, 2), 40.0))
    assert np.allclose(c.features(2), np.concatenate([c.w_down, c.w_up, c.l_down, c.l_up]))
    for s in range(5):
        f = c.features(s).reshape(4, 4)
        assert np.all(f >= 0)
        assert np.count_nonzero(f[2]) == (1 if s else 0)


def test_context_errors():
    with pytest.raises(IndexError):
        build_context(np.zeros((4, 2)), np.zeros((4, 2)), 7, 0, SMALL, np.zeros((4, 2)),
                      np.ones((4, 2)))
    with pytest.raises(ValueError):
        build_context(np.zeros((3, 2)), np.zeros((3, 2)), None, 0, SMALL, np.zeros((3, 2)),
                      np.ones((3, 2)))


def test_controller_config_validation():
    for kw in (dict(T_e=2), dict(T_s=0), dict(h_lifi=0.5), dict(objective="best")):
        with pytest.raises(ValueError):
            ControllerConfig(**kw)
    assert ControllerConfig.from_dict(ControllerConfig().to_dict()) == ControllerConfig()


# --- controller loop -----------------------------------------------------------

@pytest.fixture(scope="module")
def env():
    return make_environment(0, 0, config=SMALL)


def test_round_robin_and_cadence(env):
    log = run_experiment(env, FAST_NN, SMALL, seed=1)
    assert len(log.k) == SMALL.n_samples
    explore = log.position[: SMALL.T_e]
    assert explore == [(k // SMALL.T_s) % 4 + 1 for k in range(SMALL.T_e)]
    for k, flag in zip(log.k, log.switch_flags):
        if flag:
            assert k % SMALL.T_s == 0
    assert log.switches == sum(log.switch_flags)


def test_deterministic(env):
    a = run_experiment(env, FAST_NN, SMALL, seed=4)
    b = run_experiment(env, FAST_NN, SMALL, seed=4)
    assert a.position == b.position and a.kpi == b.kpi


def test_reference_policies(env):
    best = run_experiment(env, "OPTIMAL", SMALL)
    worst = run_experiment(env, "WORST", SMALL)
    kb, _, _ = best.post_exploration(SMALL.T_e)
    kw, _, _ = worst.post_exploration(SMALL.T_e)
    assert kb.mean() > kw.mean()
    with pytest.raises(ValueError):
        run_experiment(env, "MEDIOCRE", SMALL)


def test_col_rejected_in_experiment_mode(env):
    with pytest.raises(ValueError):
        run_experiment(env, ModelSpec("COL"), SMALL)


def test_trace_exhausted():
    env = make_environment(0, 0)
    with pytest.raises(ValueError, match="trace exhausted"):
        run_experiment(env, ModelSpec("RAND"), ControllerConfig(T_e=2000))


def test_handover_delay(env):
    # the antenna moves mid-epoch: LiFi serves nobody until the next epoch starts
    spe = env.samples_per_epoch
    assert env.active(spe + 3, 2, since=spe + 2) is None
    assert env.active(2 * spe, 2, since=spe + 2) == 2
    assert env.active(spe, 2, since=spe) == 2


def test_lab_environment_drops_background():
    env = make_environment(1, 0)
    assert env.positions == ["c1", "c2", "c3", "c4"]
    assert len(env.traces) == 4
    assert env.channel.capacity_ref == 1500.0


def test_rand_positions_uniform():
    pos = []
    for seed in range(5):
        for e in range(5):
            log = experiment_unit(ExperimentConfig(), seed, "RAND", e)
            # one draw per decision; samples within a block repeat it
            pos += [p for k, p in zip(log.k, log.position) if k >= 400 and k % 4 == 0]
    counts = np.bincount(pos, minlength=5)[1:]
    assert np.all(np.abs(counts / len(pos) - 0.25) < 0.03)
    assert chisquare(counts).pvalue > 0.01


def test_log_csv_roundtrip(env, tmp_path):
    log = run_experiment(env, ModelSpec("RAND"), SMALL, seed=2)
    log.write_csv(tmp_path / "log.csv")
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == "k,position,kpi,collision,lifi_served,switch"
    back = read_log_csv(tmp_path / "log.csv", "RAND")
    assert back.position == log.position and back.kpi == log.kpi
    assert back.switches == log.switches


def test_switches_after():
    log = ExperimentLog("x", k=list(range(6)), position=[1, 2, 2, 3, 3, 1])
    assert log.switch_flags == [0, 1, 0, 1, 0, 1]
    assert log.switches_after(3) == 2
