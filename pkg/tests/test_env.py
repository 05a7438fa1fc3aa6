import math
import warnings

import numpy as np
import pytest

from fansrl.env import (ActionClippedWarning, ChangeSchedule, Constant, DampedSine, EnvSpec, LinearGaussian,
                        PiecewiseLinear, Sine, TrackingConfig, change_value, collect_trajectories,
                        make_tracking_env, new_state, random_linear_gaussian, random_markov_theta,
                        random_mlp_family, read_jsonl, reset, step, write_jsonl)
from fansrl.errors import ContractViolation, EpisodeOverrunError
from fansrl.graph import FnMdpGraph, random_fnmdp_graph
from fansrl.rng import substream


def _linear_spec(g, fam=None, *, sigma=0.0, H=5, dyn=None, rew=None, **kw):
    fam = fam or random_linear_gaussian(g, substream(0, "w"))
    return EnvSpec(g, fam, H, kw.pop("dyn_schedule", ChangeSchedule("continuous")),
                   dyn or tuple(Sine(0, 1, 0.3 + k) for k in range(g.p)),
                   kw.pop("rew_schedule", ChangeSchedule("across_episode")),
                   rew or tuple(Sine(1, 1, 0.2 + l) for l in range(g.q)),
                   sigma_s=sigma, sigma_r=sigma, **kw)


# ---- change functions ------------------------------------------------------

def test_change_value_examples():
    assert change_value(Sine(10, 10, 0.005), 0) == 10.0
    assert change_value(PiecewiseLinear(5, 0.02, 1500), 1500) == 5.0
    assert change_value(Sine(1.5, 1.5, 0.2), 0) == 1.5
    assert change_value(Constant(3.25), 12345) == 3.25


def test_damped_sine_formula():
    fn = DampedSine(10, 3, 1.01, 10, 0.5)
    for i in (0, 1, 9, 10, 11, 500):
        assert change_value(fn, i) == pytest.approx(10 + 3 * 1.01 ** (-math.ceil(i / 10)) * math.sin(0.5 * i),
                                                    abs=1e-12)


def test_change_value_negative_index():
    with pytest.raises(ContractViolation):
        change_value(Sine(0, 1, 1), -1)


def test_schedule_indices():
    assert ChangeSchedule("continuous").index(123, 2, 23) == 123
    assert ChangeSchedule("across_episode").index(123, 2, 23) == 2
    assert ChangeSchedule("within_episode", period=10).index(123, 2, 23) == 2
    cps = ChangeSchedule("explicit", changepoints=(10, 20, 35))
    assert [cps.index(t, 0, 0) for t in (0, 9, 10, 19, 20, 34, 35, 99)] == [0, 0, 1, 1, 2, 2, 3, 3]


def test_schedule_rejects_unsorted():
    with pytest.raises(ContractViolation):
        ChangeSchedule("explicit", changepoints=(5, 3))


def test_schedule_change_points():
    assert ChangeSchedule("across_episode").change_points(10, 35).tolist() == [10, 20, 30]
    assert ChangeSchedule("within_episode", period=4).change_points(10, 20).tolist() == [4, 8, 10, 14, 18]


# ---- stepping ------------------------------------------------------------------

def test_identity_dynamics():
    g = FnMdpGraph.empty(3, 1, 1, 1).replace(Css=np.eye(3, dtype=int), csr=np.array([1, 0, 0]))
    fam = LinearGaussian(np.eye(3), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3),
                         np.array([1.0, 0, 0]), np.zeros(1), np.ones(1))
    spec = _linear_spec(g, fam)
    st = reset(new_state(spec, 0), spec)
    s0 = st.s.copy()
    _, s1, _ = step(st, spec, [0.3])
    np.testing.assert_array_equal(s1, s0)


def test_no_parents_gives_zero():
    g = FnMdpGraph.full(3, 2, 1, 1).replace(Css=np.array([[1, 1, 1], [0, 0, 0], [1, 0, 1]]),
                                             Cas=np.array([[1, 1], [0, 0], [0, 1]]),
                                             Cts=np.array([[1], [0], [0]]))
    spec = _linear_spec(g)
    st = reset(new_state(spec, 0), spec)
    _, s1, _ = step(st, spec, [0.5, -0.5])
    assert s1[1] == 0.0


def test_known_weights_matrix_vector():
    g = FnMdpGraph.full(2, 1, 1, 1)
    W_ss, W_as, W_ts = np.array([[0.5, -0.2], [0.1, 0.3]]), np.array([[1.0], [-2.0]]), np.array([[0.7], [0.0]])
    g = g.replace(Cts=np.array([[1], [0]]))
    fam = LinearGaussian(W_ss, W_as, W_ts, np.zeros(2), np.array([0.4, -0.6]), np.array([0.25]), np.array([2.0]))
    spec = _linear_spec(g, fam, dyn=(Constant(1.5),), rew=(Constant(-1.0),))
    st = reset(new_state(spec, 0), spec)
    st.s = np.array([0.2, -0.4])
    _, s1, r = step(st, spec, [0.6])
    np.testing.assert_allclose(s1, [0.5 * 0.2 - 0.2 * -0.4 + 0.6 + 0.7 * 1.5, 0.1 * 0.2 + 0.3 * -0.4 - 1.2],
                               atol=1e-15)
    assert r == pytest.approx(0.4 * 0.2 - 0.6 * -0.4 + 0.25 * 0.6 - 2.0, abs=1e-15)


def test_weights_on_masked_edge_rejected():
    g = FnMdpGraph.empty(2, 1, 1, 1)
    fam = LinearGaussian(np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2), np.zeros(2), np.zeros(1),
                         np.ones(1))
    with pytest.raises(ContractViolation):
        _linear_spec(g, fam)


def test_clip_warns_and_counts():
    spec = make_tracking_env()
    st = reset(new_state(spec, 0), spec)
    with pytest.warns(ActionClippedWarning):
        step(st, spec, [3.0])
    assert st.n_clipped == 1


def test_overrun():
    spec = make_tracking_env(TrackingConfig(horizon=2))
    st = reset(new_state(spec, 0), spec)
    step(st, spec, [0.0])
    step(st, spec, [0.0])
    with pytest.raises(EpisodeOverrunError):
        step(st, spec, [0.0])


def test_reset_mid_episode_rejected():
    spec = make_tracking_env(TrackingConfig(horizon=3))
    st = reset(new_state(spec, 0), spec)
    step(st, spec, [0.0])
    with pytest.raises(ContractViolation):
        reset(st, spec)


def test_lifetime_clock():
    spec = make_tracking_env(TrackingConfig(horizon=4))
    trajs = collect_trajectories(spec, None, 3, seed=0)
    for i, tr in enumerate(trajs):
        assert tr.episode == i
        assert tr.t_tilde.tolist() == [i * 4 + t for t in range(4)]


# ---- schedules through rollouts ------------------------------------------------

def test_continuous_theta_continues_lifetime_clock():
    fn = Sine(0, 1, 0.37)
    spec = make_tracking_env(TrackingConfig(horizon=6, wind_fn=fn, wind_schedule=ChangeSchedule("continuous")))
    trajs = collect_trajectories(spec, None, 3, seed=0)
    for i, tr in enumerate(trajs):
        assert tr.theta_s[0, 0] == change_value(fn, 6 * i)
        assert tr.theta_s[:, 0].tolist() == [change_value(fn, 6 * i + t) for t in range(6)]


def test_across_episode_reward_sequence():
    fn = Sine(1.5, 1.5, 0.2)
    spec = make_tracking_env(TrackingConfig(horizon=5, reward_fn=fn))
    trajs = collect_trajectories(spec, None, 3, seed=0)
    assert [tr.theta_r[0, 0] for tr in trajs] == [change_value(fn, i) for i in range(3)]
    for tr in trajs:
        assert np.all(tr.theta_r == tr.theta_r[0])


@pytest.mark.parametrize("sched", [ChangeSchedule("within_episode", period=3),
                                   ChangeSchedule("explicit", changepoints=(2, 7, 8, 15)),
                                   ChangeSchedule("continuous"), ChangeSchedule("across_episode")])
def test_recorded_theta_matches_change_values(sched):
    fs, fr = DampedSine(1, 2, 1.1, 2, 0.7), PiecewiseLinear(0.5, 0.1, 4)
    spec = make_tracking_env(TrackingConfig(horizon=5, wind_fn=fs, wind_schedule=sched,
                                            reward_fn=fr, reward_schedule=sched))
    for tr in collect_trajectories(spec, None, 4, seed=3):
        for k in range(len(tr)):
            idx = sched.index(int(tr.t_tilde[k]), tr.episode, int(tr.t[k]))
            assert tr.theta_s[k, 0] == change_value(fs, idx)
            assert tr.theta_r[k, 0] == change_value(fr, idx)


def test_markov_theta_process_constant_between_changes():
    g = random_fnmdp_graph(2, 3, 1, 2, 1, 0.6)
    spec = _linear_spec(g, dyn_schedule=ChangeSchedule("within_episode", period=4), theta_process="markov",
                        markov=random_markov_theta(g, substream(0, "mk")), H=12)
    for tr in collect_trajectories(spec, None, 3, seed=1):
        for block in range(3):
            seg = tr.theta_s[block * 4:(block + 1) * 4]
            assert np.all(seg == seg[0])
        assert not np.allclose(tr.theta_s[0], tr.theta_s[4])
        assert np.all(tr.theta_r == tr.theta_r[0])


# ---- tracking reward ----------------------------------------------------------------

def _tracking_reward(v, vg, a):
    spec = make_tracking_env()
    return spec.family.reward(np.array([0.0, v]), np.array([a]), np.array([vg]))


def test_tracking_reward_examples():
    assert _tracking_reward(2.0, 2.0, 0.0) == 0.0
    assert _tracking_reward(3.0, 2.0, 0.0) == -1.0
    assert _tracking_reward(2.0, 2.0, 1.0) == pytest.approx(-0.05)


def test_tracking_dimensions():
    spec = make_tracking_env()
    assert (spec.d, spec.m, spec.p, spec.q) == (2, 1, 1, 1)


# ---- trajectories and invariants ----------------------------------------------

def test_collect_zero_episodes():
    assert collect_trajectories(make_tracking_env(), None, 0) == []


def test_collect_deterministic_and_lengths():
    spec = make_tracking_env()
    a = collect_trajectories(spec, None, 4, seed=11)
    b = collect_trajectories(spec, None, 4, seed=11)
    for x, y in zip(a, b):
        assert len(x) == spec.horizon
        for k in ("s", "a", "r", "s_next", "theta_s", "theta_r"):
            np.testing.assert_array_equal(getattr(x, k), getattr(y, k))


def test_noise_free_is_deterministic_given_policy():
    g = random_fnmdp_graph(5, 3, 2, 1, 1, 0.5)
    spec = _linear_spec(g, H=8)
    pol = lambda s, st: np.tanh(s[:2])  # noqa: E731
    a = collect_trajectories(spec, pol, 2, seed=0)
    b = collect_trajectories(spec, pol, 2, seed=0)
    np.testing.assert_array_equal(a[1].s_next, b[1].s_next)


@pytest.mark.parametrize("family", ["linear", "mlp"])
def test_masked_parents_have_zero_influence(family):
    rng = np.random.default_rng(0)
    for seed in range(20):
        g = random_fnmdp_graph(seed, 4, 2, 2, 1, 0.4)
        fam = random_linear_gaussian(g, rng) if family == "linear" else random_mlp_family(g, rng)
        spec = _linear_spec(g, fam)
        st = reset(new_state(spec, seed), spec)
        for i in range(4):
            for j in np.flatnonzero(g.Css[i] == 0):
                s = rng.normal(size=4)
                s2 = s.copy()
                s2[j] += 1.7
                a = rng.uniform(-1, 1, 2)
                assert fam.dynamics(s, a, st.theta_s)[i] == fam.dynamics(s2, a, st.theta_s)[i]
            for j in np.flatnonzero(g.Cas[i] == 0):
                a = rng.uniform(-1, 1, 2)
                a2 = a.copy()
                a2[j] = -a2[j] + 0.1
                s = rng.normal(size=4)
                assert fam.dynamics(s, a, st.theta_s)[i] == fam.dynamics(s, a2, st.theta_s)[i]
        for j in np.flatnonzero(g.csr == 0):
            s = rng.normal(size=4)
            s2 = s.copy()
            s2[j] -= 2.0
            assert fam.reward(s, np.zeros(2), st.theta_r) == fam.reward(s2, np.zeros(2), st.theta_r)


def test_reward_depends_on_theta_r_only_via_reward_fns():
    g = random_fnmdp_graph(7, 3, 1, 1, 1, 0.6)
    fam = random_linear_gaussian(g, substream(1, "w"))
    a = _linear_spec(g, fam, rew=(Constant(0.0),), H=6)
    b = _linear_spec(g, fam, rew=(Constant(2.0),), H=6)
    ta = collect_trajectories(a, None, 2, seed=4)
    tb = collect_trajectories(b, None, 2, seed=4)
    for x, y in zip(ta, tb):
        np.testing.assert_array_equal(x.s_next, y.s_next)
        np.testing.assert_allclose(y.r - x.r, fam.w_tr[0] * 2.0, atol=1e-12)


def test_mechanism_change_zeroes_one_action():
    g = FnMdpGraph.full(2, 3, 1, 1)
    spec = _linear_spec(g, mechanism_change=True, H=3)
    st = new_state(spec, 0)
    for _ in range(5):
        reset(st, spec)
        assert st.action_mask.sum() == 2
        while st.t < spec.horizon:
            step(st, spec, [0.0, 0.0, 0.0])


def test_jsonl_roundtrip(tmp_path):
    spec = make_tracking_env(TrackingConfig(horizon=7))
    trajs = collect_trajectories(spec, None, 3, seed=2)
    write_jsonl(trajs, tmp_path / "t.jsonl")
    back = read_jsonl(tmp_path / "t.jsonl")
    assert len(back) == 3
    for x, y in zip(trajs, back):
        for k in ("t", "t_tilde", "s", "a", "r", "s_next", "theta_s", "theta_r"):
            np.testing.assert_array_equal(getattr(x, k), getattr(y, k))
    write_jsonl([t.without_theta() for t in trajs], tmp_path / "h.jsonl")
    assert read_jsonl(tmp_path / "h.jsonl")[0].theta_s is None


def test_spec_dict_roundtrip():
    g = random_fnmdp_graph(1, 3, 2, 2, 1, 0.5)
    spec = _linear_spec(g, theta_process="markov", markov=random_markov_theta(g, substream(0, "m")))
    back = EnvSpec.from_dict(spec.to_dict())
    a = collect_trajectories(spec, None, 2, seed=5)
    b = collect_trajectories(back, None, 2, seed=5)
    np.testing.assert_array_equal(a[1].s_next, b[1].s_next)
    np.testing.assert_array_equal(a[1].theta_s, b[1].theta_s)
    trk = make_tracking_env()
    assert EnvSpec.from_dict(trk.to_dict()).to_dict() == trk.to_dict()


def test_clone_is_independent():
    spec = make_tracking_env()
    st = reset(new_state(spec, 0), spec)
    cl = st.clone()
    _, s1, _ = step(st, spec, [0.2])
    _, s2, _ = step(cl, spec, [0.2])
    np.testing.assert_array_equal(s1, s2)


def test_in_bounds_actions_do_not_warn():
    spec = make_tracking_env()
    st = reset(new_state(spec, 0), spec)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        step(st, spec, [1.0])
