import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fansrl import driver
from fansrl.driver import (RunConfig, RunMetrics, affine_theta_error, lifetime_changepoints, resolve_mode,
                           run_fansrl, run_oracle, run_sac_baseline, theta_distance_matrix)
from fansrl.env import ChangeSchedule, Sine, TrackingConfig, make_tracking_env
from fansrl.errors import ContractViolation, NumericalError
from fansrl.fnvae import TrainConfig

TINY = RunConfig(n_episodes=3, n_init=3, batch_size=16, refresh_every=5,
                 train=TrainConfig(epochs=10, batch=2, window=20))


def tracking(horizon=10, **kw):
    return make_tracking_env(TrackingConfig(horizon=horizon, **kw))


def continuous_tracking(horizon=10):
    return tracking(horizon, reward_schedule=ChangeSchedule("continuous"), reward_fn=Sine(1.5, 1.5, 0.01))


@pytest.fixture(scope="module")
def fansrl_run():
    return run_fansrl(tracking(), TINY, seed=3)


# ---- runner contracts ----

@pytest.mark.parametrize("runner", [run_fansrl, run_oracle, run_sac_baseline])
def test_zero_episodes_gives_empty_metrics(runner):
    m = runner(tracking(), RunConfig(n_episodes=0, n_init=2, train=TrainConfig(epochs=2, batch=1, window=5)))
    assert m.returns == [] and m.episode == []
    assert np.isnan(m.final_return())


def test_policy_input_dimensions(fansrl_run):
    spec = tracking()
    assert run_sac_baseline(spec, TINY).policy_input_dim == spec.d
    assert run_oracle(spec, TINY).policy_input_dim == spec.d + spec.p + spec.q
    m = fansrl_run
    assert m.policy_input_dim == len(m.info["s_min"]) + len(m.info["theta_min"])
    assert m.artifacts["sac"].n_in == m.policy_input_dim


@pytest.mark.parametrize("runner", [run_fansrl, run_oracle, run_sac_baseline])
def test_runs_are_deterministic_per_seed(runner):
    a = runner(tracking(), TINY, seed=5)
    b = runner(tracking(), TINY, seed=5)
    assert a.returns == b.returns
    assert np.array_equal(np.nan_to_num(a.theta_err), np.nan_to_num(b.theta_err))


def test_seeds_differ():
    assert run_sac_baseline(tracking(), TINY, seed=1).returns != run_sac_baseline(tracking(), TINY, seed=2).returns


def test_one_metrics_row_per_episode(fansrl_run):
    m = fansrl_run
    assert len(m.returns) == len(m.shd) == len(m.theta_err) == len(m.wall_ms) == TINY.n_episodes
    assert m.episode == list(range(TINY.n_init, TINY.n_init + TINY.n_episodes))


def test_masks_frozen_online(fansrl_run):
    assert fansrl_run.info["masks_frozen"]
    assert fansrl_run.artifacts["params"].mask_mode == "hard"


def test_discrete_theta_constant_between_change_points():
    spec = tracking(12, reward_schedule=ChangeSchedule("within_episode", 5))
    m = run_fansrl(spec, TINY, seed=0)
    assert m.info["mode"] == "discrete"
    buf = m.artifacts["buffer"].ordered()
    cps = set(m.artifacts["changepoints"].tolist())
    th = np.concatenate([buf["theta_s"], buf["theta_r"]], axis=1)
    tt = buf["t_tilde"]
    online = tt >= TINY.n_init * spec.horizon
    changes = 0
    for i in np.flatnonzero(online)[1:]:
        if int(tt[i]) in cps:
            changes += 1
        else:
            assert np.array_equal(th[i], th[i - 1]), f"θ moved inside a segment at t̃={tt[i]}"
    assert changes > 0


@pytest.mark.parametrize("schedule", [ChangeSchedule("across_episode"), ChangeSchedule("within_episode", 4),
                                      ChangeSchedule("continuous")])
def test_relabel_matches_current_model(schedule):
    spec = tracking(reward_schedule=schedule, reward_fn=Sine(1.5, 1.5, 0.05))
    cfg = RunConfig(**{**TINY.__dict__, "relabel_every": 1})
    m = run_fansrl(spec, cfg, seed=1)
    buf = m.artifacts["buffer"]
    rec = buf.ordered()
    st = driver.Stream(rec["s"], rec["a"], rec["r"], rec["s_next"], rec["t_tilde"], rec["episode"], rec["t"])
    ts, tr, _ = driver._label_stream(m.artifacts["params"], st, m.artifacts["changepoints"])
    np.testing.assert_array_equal(rec["theta_s"], ts)
    np.testing.assert_array_equal(rec["theta_r"], tr)
    last = np.append(rec["episode"][1:] != rec["episode"][:-1], True)
    np.testing.assert_array_equal(rec["theta_r_next"][~last], tr[1:][~last[:-1]])
    np.testing.assert_array_equal(rec["theta_r_next"][last], tr[last])


def test_continuous_theta_handoff_between_episodes():
    m = run_fansrl(continuous_tracking(), TINY, seed=0)
    assert m.info["mode"] == "continuous"
    src = m.artifacts["source"]
    assert len(src.handoff_in) == len(src.handoff_out) == TINY.n_episodes
    for start, prev_end in zip(src.handoff_in[1:], src.handoff_out[:-1]):
        np.testing.assert_array_equal(start, prev_end)


def test_time_limit_transitions_bootstrap(fansrl_run):
    buf = fansrl_run.artifacts["buffer"].ordered()
    assert np.all(buf["done"] == 0.0)
    last = buf["t"] == 9
    np.testing.assert_array_equal(buf["theta_r_next"][last], buf["theta_r"][last])


def test_buffer_holds_init_and_online_steps(fansrl_run):
    buf = fansrl_run.artifacts["buffer"].ordered()
    np.testing.assert_array_equal(buf["t_tilde"], np.arange((TINY.n_init + TINY.n_episodes) * 10))


def test_oracle_buffer_holds_true_theta():
    spec = tracking()
    m = run_oracle(spec, TINY, seed=0)
    buf = m.artifacts["buffer"].ordered()
    ep = buf["episode"]
    np.testing.assert_allclose(buf["theta_r"][:, 0], 1.5 + 1.5 * np.sin(0.2 * ep), rtol=0, atol=1e-12)


def test_oracle_needs_recorded_theta(monkeypatch):
    real = driver._Run.init_episodes
    monkeypatch.setattr(driver._Run, "init_episodes", lambda self: [t.without_theta() for t in real(self)])
    with pytest.raises(ContractViolation):
        run_oracle(tracking(), TINY)


def test_fansrl_needs_initial_data():
    with pytest.raises(ContractViolation):
        run_fansrl(tracking(), RunConfig(n_episodes=1, n_init=0))


def test_numerical_failure_carries_run_position(monkeypatch):
    def boom(self, batch):
        raise NumericalError("SAC loss is not finite", {"report": {}})
    monkeypatch.setattr(driver.SacLearner, "update", boom)
    with pytest.raises(NumericalError) as ei:
        run_sac_baseline(tracking(), TINY)
    assert ei.value.snapshot["method"] == "sac" and "t_tilde" in ei.value.snapshot


def test_eval_episodes_leave_training_untouched():
    cfg = RunConfig(**{**TINY.__dict__, "eval_every": 1})
    a = run_sac_baseline(tracking(), cfg, seed=4)
    b = run_sac_baseline(tracking(), TINY, seed=4)
    assert sorted(a.eval_returns) == [4, 5, 6]
    assert a.returns == b.returns


# ---- modes and change points ----

def test_mode_resolution():
    assert resolve_mode(tracking(), "auto") == "discrete"
    assert resolve_mode(continuous_tracking(), "auto") == "continuous"
    assert resolve_mode(tracking(), "continuous") == "continuous"
    with pytest.raises(ContractViolation):
        resolve_mode(continuous_tracking(), "discrete")
    with pytest.raises(ContractViolation):
        RunConfig(mode="sometimes")


def test_lifetime_change_points():
    np.testing.assert_array_equal(lifetime_changepoints(tracking(10), 50), [10, 20, 30, 40])
    spec = tracking(10, reward_schedule=ChangeSchedule("within_episode", 4))
    np.testing.assert_array_equal(lifetime_changepoints(spec, 20), [4, 8, 10, 14, 18])


# ---- metrics ----

def test_metrics_record_is_monotone_and_csv_has_header(tmp_path):
    m = RunMetrics("sac", 0, 2)
    m.record(3, -1.0, 0, 0.5, 1.0)
    with pytest.raises(ContractViolation):
        m.record(3, -1.0, 0, 0.5, 1.0)
    m.record(4, -2.0, 0, float("nan"), 1.0)
    m.write_csv(tmp_path / "m.csv", {"config_hash": "abc", "seed": 0, "version": "x"})
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[:3] == ["# config_hash=abc", "# seed=0", "# version=x"]
    assert lines[3] == "episode,return,shd,theta_err,wall_ms"
    assert len(lines) == 6
    assert m.final_return() == -1.5


def test_affine_theta_error():
    rng = np.random.default_rng(0)
    true = rng.normal(size=(40, 2))
    learned = true @ np.array([[2.0, 0.5], [-1.0, 1.0]]) + 3.0
    assert affine_theta_error(learned, true) < 1e-10
    assert affine_theta_error(rng.normal(size=(40, 2)), true) > 0.5
    assert np.isnan(affine_theta_error(learned[:2], true[:2]))


# ---- θ distance analysis ----

def test_distance_matrix_identical_vectors_is_zero():
    D, rho = theta_distance_matrix(np.ones((5, 3)), np.arange(5.0))
    np.testing.assert_array_equal(D, 0.0)
    assert np.isnan(rho)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_distance_matrix_symmetric_zero_diagonal(n, k, seed):
    rng = np.random.default_rng(seed)
    D, _ = theta_distance_matrix(rng.normal(size=(n, k)), rng.normal(size=n))
    np.testing.assert_array_equal(np.diag(D), 0.0)
    np.testing.assert_array_equal(D, D.T)
    assert np.all(D >= 0)


def test_distance_rank_correlation_of_affine_map_is_one():
    v = np.linspace(0.0, 3.0, 10) ** 2
    _, rho = theta_distance_matrix(np.stack([4.0 * v - 1.0, -2.0 * v], axis=1), v)
    assert rho == pytest.approx(1.0)


def test_distance_matrix_needs_three_points():
    with pytest.raises(ContractViolation):
        theta_distance_matrix(np.zeros((2, 1)), np.zeros(2))


def test_theta_analysis_on_a_run(fansrl_run):
    res = driver.theta_analysis(fansrl_run, n_sampled=3)
    assert res["distances"].shape == (3, 3)
    assert np.all(np.diff(res["true"][:, 0]) >= 0)
