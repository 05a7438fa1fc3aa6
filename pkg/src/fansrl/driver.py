"""Online loops: FANS-RL, the θ-oracle and the plain SAC baseline.

All three runners share one episode loop. They differ only in where the
change factors fed to the policy come from:

    sac      nothing; the policy sees the full state
    oracle   the environment's true (θˢ, θʳ), appended to the full state
    fansrl   FN-VAE estimates, restricted to the compact representation

Every runner starts with ``n_init`` uniform-random episodes that also seed its
replay buffer, so paired runs see the same environment realization and the
same change phase at every episode index.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .env import EnvSpec, EnvState, Trajectory, collect_trajectories, new_state, reset, step
from .errors import ContractViolation, NumericalError
from .fnvae import (FnVaeConfig, FnVaeParams, FnVaeTrainer, Stream, TrainConfig, extract_masks, make_batch,
                    segment_posteriors, window_starts)
from .graph import FnMdpGraph, compact_representation
from .rng import substream
from .sac import ReplayBuffer, SacConfig, SacLearner, SacParams, act

MODES = ("auto", "continuous", "discrete")


@dataclass(frozen=True)
class RunConfig:
    n_episodes: int = 300
    n_init: int = 20
    mode: str = "auto"
    # FN-VAE
    p: int = 2
    q: int = 2
    fnvae: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1500, batch=4, window=150, lr=3e-3))
    refresh_every: int = 10
    refresh_batch: int = 4
    relabel_every: int = 10
    theta_sample: bool = False
    # policy
    sac: SacConfig = field(default_factory=SacConfig)
    batch_size: int = 128
    buffer_capacity: int = 100_000
    update_every: int = 1
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}")
        if self.n_episodes < 0 or self.n_init < 0:
            raise ContractViolation("episode counts must be nonnegative")
        if self.p < 1 or self.q < 1:
            raise ContractViolation("learned change factors need p, q >= 1")
        if self.batch_size < 1 or self.update_every < 1 or self.refresh_every < 0 or self.eval_every < 0:
            raise ContractViolation("batch_size, update_every >= 1; refresh_every, eval_every >= 0")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["train"]["smooth"] = asdict(self.train.smooth)
        doc["train"]["weights"] = self.train.weights.to_dict()
        return doc


@dataclass
class RunMetrics:
    """One row per online episode, plus run-level facts."""

    method: str
    seed: int
    policy_input_dim: int
    episode: list[int] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)
    smoothed: list[float] = field(default_factory=list)
    shd: list[float] = field(default_factory=list)
    theta_err: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    eval_returns: dict[int, float] = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    # live objects for follow-up analysis; never serialized
    artifacts: dict = field(default_factory=dict, repr=False)

    CSV_COLUMNS = ("episode", "return", "shd", "theta_err", "wall_ms")

    def record(self, episode: int, ret: float, shd: float, theta_err: float, wall_ms: float) -> None:
        if self.episode and episode <= self.episode[-1]:
            raise ContractViolation("episodes must be recorded in increasing order")
        self.episode.append(episode)
        self.returns.append(ret)
        prev = self.smoothed[-1] if self.smoothed else ret
        self.smoothed.append(0.9 * prev + 0.1 * ret)
        self.shd.append(shd)
        self.theta_err.append(theta_err)
        self.wall_ms.append(wall_ms)

    def final_return(self, last: int = 50) -> float:
        if not self.returns:
            return float("nan")
        return float(np.mean(self.returns[-last:]))

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for row in zip(self.episode, self.returns, self.shd, self.theta_err, self.wall_ms):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


# ---- change-factor sources ------------------------------------------------------

class NoTheta:
    p = q = 0

    def begin(self, state: EnvState) -> None:
        pass

    def current(self, state: EnvState) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(0), np.zeros(0)

    def observe(self, s, a, r, s_next) -> None:
        pass

    def end(self) -> None:
        pass

    def clone(self):
        return copy.copy(self)


class TrueTheta(NoTheta):
    def __init__(self, spec: EnvSpec):
        self.p, self.q = spec.p, spec.q

    def current(self, state):
        return state.theta_s.copy(), state.theta_r.copy()


class LearnedTheta(NoTheta):
    """Online θ estimates from a trained FN-VAE.

    Discrete mode keeps θ fixed inside a change segment; at each change point
    the prior net maps the previous segment's posterior to the new estimate.
    Continuous mode filters every step: the inference LSTM reads each
    transition and the prior net maps that posterior to the next step's θ.
    """

    def __init__(self, params: FnVaeParams, changepoints: np.ndarray | None, theta_old: tuple,
                 rng: np.random.Generator, sample: bool = False):
        self.params, self.cps = params, changepoints
        self.p, self.q = params.cfg.p, params.cfg.q
        self.rng, self.sample = rng, sample
        self.theta_old = (theta_old[0].copy(), theta_old[1].copy())
        self.theta = self.theta_old
        self.seg: list[tuple] = []
        self.lstm = None
        self._cp_set = set() if changepoints is None else {int(c) for c in changepoints}
        # continuous mode: θ_old at each episode end, and the prior input at each episode start
        self.handoff_out: list[np.ndarray] = []
        self.handoff_in: list[np.ndarray] = []

    @property
    def discrete(self) -> bool:
        return self.cps is not None

    def _prior(self, ts, tr):
        hs, hr = self.params.prior_s(ts[None, :]), self.params.prior_r(tr[None, :])
        if self.sample:
            return (hs.mean.data[0] + np.exp(0.5 * hs.log_var.data[0]) * self.rng.standard_normal(self.p),
                    hr.mean.data[0] + np.exp(0.5 * hr.log_var.data[0]) * self.rng.standard_normal(self.q))
        return hs.mean.data[0].copy(), hr.mean.data[0].copy()

    def begin(self, state):
        if not self.discrete:
            self.handoff_in.append(np.concatenate(self.theta_old))
            self.theta = self._prior(*self.theta_old)

    def end(self):
        if not self.discrete:
            self.handoff_out.append(np.concatenate(self.theta_old))

    def current(self, state):
        if self.discrete and self.seg and state.t_tilde in self._cp_set:
            self.theta_old = self._segment_posterior()
            self.theta = self._prior(*self.theta_old)
            self.seg = []
        return self.theta[0].copy(), self.theta[1].copy()

    def _segment_posterior(self):
        rows = self.seg
        st = Stream(np.array([x[0] for x in rows]), np.array([x[1] for x in rows]), np.array([x[2] for x in rows]),
                    np.array([x[3] for x in rows]), np.arange(len(rows)), np.zeros(len(rows), np.int64),
                    np.arange(len(rows)))
        hs, hr, _ = segment_posteriors(self.params, make_batch(st, [0], len(rows), np.zeros(0)), None)
        return hs.mean.data[0, 0].copy(), hr.mean.data[0, 0].copy()

    def observe(self, s, a, r, s_next):
        if self.discrete:
            self.seg.append((s, a, r, s_next))
            return
        x = self.params.lstm_input(s, a, np.array(r), s_next)
        k = self.params.cfg.lstm
        if self.lstm is None:
            self.lstm = (np.zeros(k), np.zeros(k), np.zeros(k), np.zeros(k))
        hs, cs, hr, cr = self.lstm
        out_s, hs, cs = self.params.phi_s.step(x, hs, cs)
        out_r, hr, cr = self.params.phi_r.step(x, hr, cr)
        self.lstm = (hs, cs, hr, cr)
        self.theta_old = (out_s[:self.p].copy(), out_r[:self.q].copy())
        self.theta = self._prior(*self.theta_old)

    def clone(self):
        out = copy.copy(self)
        out.seg = list(self.seg)
        out.handoff_in, out.handoff_out = [], []
        out.rng = copy.deepcopy(self.rng)
        return out


# ---- helpers --------------------------------------------------------------------

def resolve_mode(spec: EnvSpec, mode: str) -> str:
    discrete = spec.dyn_schedule.discrete and spec.rew_schedule.discrete
    if mode == "auto":
        return "discrete" if discrete else "continuous"
    if mode == "discrete" and not discrete:
        raise ContractViolation("discrete mode needs discrete dynamics and reward schedules")
    return mode


def lifetime_changepoints(spec: EnvSpec, n_steps: int) -> np.ndarray:
    """Sorted lifetime steps where either schedule's change index moves."""
    a = spec.dyn_schedule.change_points(spec.horizon, n_steps)
    b = spec.rew_schedule.change_points(spec.horizon, n_steps)
    return np.union1d(a, b).astype(np.int64)


def observed_shd(learned: FnMdpGraph, truth: FnMdpGraph) -> int:
    """SHD over the masks whose shape does not depend on the latent sizes."""
    return int(sum(np.sum(getattr(learned, k).astype(bool) != getattr(truth, k).astype(bool))
                   for k in ("Css", "Cas", "csr", "car")))


def affine_theta_error(learned: np.ndarray, true: np.ndarray) -> float:
    """RMS residual of the best affine map from learned θ to true θ.

    Learned factors are identified only up to an invertible transform, so the
    raw difference is meaningless; 0 means the truth is fully recoverable.
    """
    if len(learned) < 3 or true.shape[1] == 0:
        return float("nan")
    X = np.column_stack([learned, np.ones(len(learned))])
    coef, *_ = np.linalg.lstsq(X, true, rcond=None)
    return float(np.sqrt(np.mean((X @ coef - true) ** 2)))


def theta_distance_matrix(learned, true_values) -> tuple[np.ndarray, float]:
    """Pairwise distances between learned θ vectors and their rank correlation
    with the distances between the corresponding true change values."""
    L = np.asarray(learned, dtype=np.float64)
    L = L.reshape(len(L), -1)
    V = np.asarray(true_values, dtype=np.float64).reshape(len(L), -1)
    if len(L) < 3:
        raise ContractViolation("need at least 3 sampled steps")
    D = np.sqrt(np.maximum(((L[:, None, :] - L[None, :, :]) ** 2).sum(-1), 0.0))
    T = np.sqrt(((V[:, None, :] - V[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(len(L), 1)
    if np.ptp(D[iu]) == 0 or np.ptp(T[iu]) == 0:
        return D, float("nan")
    return D, float(spearmanr(D[iu], T[iu]).statistic)


# ---- the shared loop --------------------------------------------------------------

class _Run:
    def __init__(self, method: str, spec: EnvSpec, cfg: RunConfig, seed: int):
        self.method, self.spec, self.cfg, self.seed = method, spec, cfg, seed
        self.state = new_state(spec, seed)
        self.total_steps = (cfg.n_init + cfg.n_episodes) * spec.horizon

    def init_episodes(self) -> list[Trajectory]:
        return collect_trajectories(self.spec, None, self.cfg.n_init, record_theta=True, seed=self.seed,
                                    state=self.state)


def _featurizer(s_idx, th_idx):
    s_idx, th_idx = np.asarray(s_idx, dtype=np.int64), np.asarray(th_idx, dtype=np.int64)

    def f(s, ts, tr):
        th = np.concatenate([ts, tr], axis=-1)
        return np.concatenate([s[..., s_idx], th[..., th_idx]], axis=-1)
    return f, len(s_idx) + len(th_idx)


def _online(run: _Run, source: NoTheta, feat, n_in: int, metrics: RunMetrics, init_records: list[dict],
            refresh=None, relabel=None, theta_true_dims=None) -> RunMetrics:
    spec, cfg = run.spec, run.cfg
    sac = SacParams(n_in, spec.m, SacConfig(**{**asdict(cfg.sac), "seed": cfg.seed * 1000 + run.seed}))
    learner = SacLearner(sac, seed=run.seed)
    buf = ReplayBuffer(cfg.buffer_capacity, spec.d, spec.m, source.p, source.q)
    for rec in init_records:
        buf.push(**rec)
    act_rng = substream(run.seed, run.method, "act")
    samp_rng = substream(run.seed, run.method, "sample")
    th_hist: list[tuple[np.ndarray, np.ndarray]] = []
    true_r = metrics.artifacts.setdefault("true_theta_r", {})

    def to_batch(b):
        return {"obs": feat(b["s"], b["theta_s"], b["theta_r"]), "a": b["a"], "r": b["r"],
                "obs_next": feat(b["s_next"], b["theta_s_next"], b["theta_r_next"]), "done": b["done"]}

    def episode(state, src, learn: bool, deterministic: bool):
        reset(state, spec)
        src.begin(state)
        ret, pending = 0.0, None
        th_l, th_t = [], []
        for t in range(spec.horizon):
            ts, tr = src.current(state)
            if pending is not None:
                pending.update(theta_s_next=ts, theta_r_next=tr)
                if learn:
                    buf.push(**pending)
            s = state.s.copy()
            a = act(sac, feat(s, ts, tr), deterministic=deterministic, rng=act_rng)
            tt, ep = state.t_tilde, state.episode
            th_l.append(np.concatenate([ts, tr]))
            th_t.append(np.concatenate([state.theta_s, state.theta_r]))
            _, s_next, r = step(state, spec, a)
            ret += r
            src.observe(s, a, r, s_next)
            # the horizon is a time limit, not a terminal state
            pending = dict(s=s, a=a, r=r, theta_s=ts, theta_r=tr, s_next=s_next, done=0.0,
                           t_tilde=tt, episode=ep, t=t)
            if learn:
                if refresh is not None and cfg.refresh_every and (tt + 1) % cfg.refresh_every == 0:
                    refresh(buf)
                if len(buf) >= cfg.batch_size and (tt + 1) % cfg.update_every == 0:
                    learner.update(to_batch(buf.sample(cfg.batch_size, samp_rng)))
        src.end()
        pending.update(theta_s_next=pending["theta_s"], theta_r_next=pending["theta_r"])
        if learn:
            buf.push(**pending)
        return ret, np.array(th_l), np.array(th_t)

    for n in range(cfg.n_episodes):
        t0 = time.perf_counter()
        try:
            ret, th_l, th_t = episode(run.state, source, True, False)
        except NumericalError as exc:
            snap = dict(exc.snapshot)
            snap.update(method=run.method, episode=n, t_tilde=run.state.t_tilde)
            raise NumericalError(str(exc), snap) from exc
        th_hist.append((th_l, th_t))
        true_r[int(run.state.episode)] = th_t[0, spec.p:] if theta_true_dims != 0 else run.state.theta_r.copy()
        del th_hist[:-50]
        if theta_true_dims == 0:
            err = float("nan")
        elif theta_true_dims is None:
            err = 0.0
        else:
            err = affine_theta_error(np.concatenate([h[0] for h in th_hist]),
                                     np.concatenate([h[1] for h in th_hist]))
        if relabel is not None and cfg.relabel_every and (n + 1) % cfg.relabel_every == 0:
            relabel(buf)
        metrics.record(int(run.state.episode), ret, metrics.info.get("shd", float("nan")), err,
                       1e3 * (time.perf_counter() - t0))
        if cfg.eval_every and (n + 1) % cfg.eval_every == 0:
            metrics.eval_returns[int(run.state.episode) + 1] = episode(run.state.clone(), source.clone(),
                                                                       False, True)[0]
    metrics.artifacts.update(sac=sac, buffer=buf, source=source, state=run.state)
    return metrics


def _records(traj: Trajectory, ts: np.ndarray, tr: np.ndarray) -> list[dict]:
    """Buffer records for an episode given per-step θ estimates (rows)."""
    out = []
    H = len(traj)
    for t in range(H):
        nx = min(t + 1, H - 1)
        out.append(dict(s=traj.s[t], a=traj.a[t], r=float(traj.r[t]), theta_s=ts[t], theta_r=tr[t],
                        s_next=traj.s_next[t], theta_s_next=ts[nx], theta_r_next=tr[nx], done=0.0,
                        t_tilde=int(traj.t_tilde[t]), episode=int(traj.episode), t=t))
    return out


# ---- runners ------------------------------------------------------------------------

def run_sac_baseline(spec: EnvSpec, cfg: RunConfig = RunConfig(), seed: int | None = None) -> RunMetrics:
    seed = cfg.seed if seed is None else seed
    run = _Run("sac", spec, cfg, seed)
    feat, n_in = _featurizer(range(spec.d), [])
    src = NoTheta()
    recs = [r for tr in run.init_episodes() for r in _records(tr, np.zeros((len(tr), 0)), np.zeros((len(tr), 0)))]
    m = RunMetrics("sac", seed, n_in)
    return _online(run, src, feat, n_in, m, recs, theta_true_dims=0)


def run_oracle(spec: EnvSpec, cfg: RunConfig = RunConfig(), seed: int | None = None) -> RunMetrics:
    seed = cfg.seed if seed is None else seed
    run = _Run("oracle", spec, cfg, seed)
    feat, n_in = _featurizer(range(spec.d), range(spec.p + spec.q))
    src = TrueTheta(spec)
    trajs = run.init_episodes()
    if any(tr.theta_s is None for tr in trajs):
        raise ContractViolation("the oracle needs recorded ground-truth θ")
    recs = [r for tr in trajs for r in _records(tr, tr.theta_s, tr.theta_r)]
    m = RunMetrics("oracle", seed, n_in)
    return _online(run, src, feat, n_in, m, recs, theta_true_dims=None)


def _label_stream(params: FnVaeParams, stream: Stream, cps, sample_rng=None) -> tuple[np.ndarray, np.ndarray, tuple]:
    """θ estimates for every step of a lifetime-ordered stream as the online loop
    would have produced them with the current model; also the final posterior."""
    n = len(stream)
    p, q = params.cfg.p, params.cfg.q
    ts, tr = np.zeros((n, p)), np.zeros((n, q))
    if cps is not None:
        batch = make_batch(stream, [0], n, cps)
        hs, hr, _ = segment_posteriors(params, batch, cps)
        ps, pr = hs.mean.data[0], hr.mean.data[0]
        M = int(batch.seg_valid[0].sum())
        seg = batch.seg[0]
        prs, prr = params.prior_s(ps[:M]).mean.data, params.prior_r(pr[:M]).mean.data
        for j in range(M):
            rows = seg == j
            # the first segment has no predecessor and uses its own posterior
            ts[rows] = ps[0] if j == 0 else prs[j - 1]
            tr[rows] = pr[0] if j == 0 else prr[j - 1]
        return ts, tr, (ps[M - 1].copy(), pr[M - 1].copy())
    batch = make_batch(stream, [0], n, None)
    x = params.lstm_input(batch.s, batch.a, batch.r, batch.s_next)
    hs, hr = params.infer(x, batch.keep)
    ps, pr = hs.mean.data[0], hr.mean.data[0]
    prs, prr = params.prior_s(ps).mean.data, params.prior_r(pr).mean.data
    ts[0], tr[0] = ps[0], pr[0]
    ts[1:], tr[1:] = prs[:-1], prr[:-1]
    return ts, tr, (ps[-1].copy(), pr[-1].copy())


def run_fansrl(spec: EnvSpec, cfg: RunConfig = RunConfig(), seed: int | None = None) -> RunMetrics:
    seed = cfg.seed if seed is None else seed
    mode = resolve_mode(spec, cfg.mode)
    run = _Run("fansrl", spec, cfg, seed)
    cps = lifetime_changepoints(spec, run.total_steps) if mode == "discrete" else None

    # initial collection and offline model learning with updateG on
    trajs = run.init_episodes()
    if not trajs:
        raise ContractViolation("FANS-RL needs n_init >= 1 episodes to learn the initial model")
    stream = Stream.from_trajectories(trajs)
    params = FnVaeParams(FnVaeConfig(spec.d, spec.m, cfg.p, cfg.q, **{**cfg.fnvae, "seed": seed}))
    params.fit_normalizer(stream.s, stream.r)
    tcfg = TrainConfig(**{**{k: getattr(cfg.train, k) for k in cfg.train.__dataclass_fields__}, "seed": seed})
    trainer = FnVaeTrainer(params, tcfg)
    if len(stream) >= 3:
        trainer.fit(stream, epochs=tcfg.epochs, changepoints=cps, update_g=True)

    # masks are frozen from here on
    params.mask_mode = "hard"
    graph = extract_masks(params)
    compact = compact_representation(graph)
    feat, n_in = _featurizer(compact.s_min, compact.theta_min)

    ts, tr, last = _label_stream(params, stream, cps)
    recs = []
    off = 0
    for traj in trajs:
        n = len(traj)
        recs += _records(traj, ts[off:off + n], tr[off:off + n])
        off += n
    src = LearnedTheta(params, cps, last, substream(seed, "theta-sample"), cfg.theta_sample)
    if cps is None:
        # run the filter over the initial data so its LSTM state carries into the online phase
        for i in range(len(stream)):
            src.observe(stream.s[i], stream.a[i], stream.r[i], stream.s_next[i])
    else:
        # the last initial segment stays open until the next change point
        opens = np.flatnonzero(np.isin(stream.t_tilde, cps))
        start = int(opens[-1]) if opens.size else 0
        src.seg = [(stream.s[i], stream.a[i], stream.r[i], stream.s_next[i]) for i in range(start, len(stream))]
        src.theta = (ts[-1].copy(), tr[-1].copy())

    trainer_rng = substream(seed, "refresh")
    g_before = {k: v.data.copy() for k, v in params.G.named_params().items()}

    def refresh(buf: ReplayBuffer):
        rec = buf.ordered()
        st = Stream(rec["s"], rec["a"], rec["r"], rec["s_next"], rec["t_tilde"], rec["episode"], rec["t"])
        k = min(tcfg.window, len(st))
        if k < 3:
            return
        starts = window_starts(st, k, cfg.refresh_batch, trainer_rng, cps)
        trainer.step_batch(make_batch(st, starts, k, cps), update_g=False)

    def relabel(buf: ReplayBuffer):
        o = buf._order()
        rec = buf.ordered()
        st = Stream(rec["s"], rec["a"], rec["r"], rec["s_next"], rec["t_tilde"], rec["episode"], rec["t"])
        new_s, new_r, _ = _label_stream(params, st, cps)
        buf.data["theta_s"][o], buf.data["theta_r"][o] = new_s, new_r
        last_t = np.append(rec["episode"][1:] != rec["episode"][:-1], True)
        nx = np.where(last_t, np.arange(len(st)), np.minimum(np.arange(len(st)) + 1, len(st) - 1))
        buf.data["theta_s_next"][o], buf.data["theta_r_next"][o] = new_s[nx], new_r[nx]

    m = RunMetrics("fansrl", seed, n_in)
    m.info.update(mode=mode, s_min=list(compact.s_min), theta_min=list(compact.theta_min),
                  graph=graph.to_dict(), shd=float(observed_shd(graph, spec.graph)),
                  n_changepoints=0 if cps is None else int(len(cps)))
    _online(run, src, feat, n_in, m, recs, refresh=refresh, relabel=relabel, theta_true_dims=spec.p + spec.q)
    g_after = {k: v.data for k, v in params.G.named_params().items()}
    m.info["masks_frozen"] = all(np.array_equal(g_before[k], g_after[k]) for k in g_before)
    m.artifacts.update(params=params, trainer=trainer, changepoints=cps)
    return m


RUNNERS = {"fansrl": run_fansrl, "oracle": run_oracle, "sac": run_sac_baseline}


def episode_theta_r(metrics: RunMetrics, last: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean θʳ per episode for the most recent ``last`` episodes of a
    FANS-RL run, and the true θʳ of those episodes."""
    params: FnVaeParams = metrics.artifacts["params"]
    buf: ReplayBuffer = metrics.artifacts["buffer"]
    rec = buf.ordered()
    true_r = metrics.artifacts["true_theta_r"]
    eps = [e for e in np.unique(rec["episode"]) if int(e) in true_r][-last:]
    learned, true = [], []
    for e in eps:
        rows = np.flatnonzero(rec["episode"] == e)
        if len(rows) < 2:
            continue
        st = Stream(*[rec[f][rows] for f in ("s", "a", "r", "s_next", "t_tilde", "episode", "t")])
        hs, hr, _ = segment_posteriors(params, make_batch(st, [0], len(rows), np.zeros(0)), None)
        learned.append(hr.mean.data[0, 0])
        true.append(true_r[int(e)])
    return np.array(learned), np.array(true)


def theta_analysis(metrics: RunMetrics, n_sampled: int = 10, last: int = 50) -> dict:
    """Distance matrix and Spearman ρ for ``n_sampled`` recent episodes whose
    true θʳ spans the observed range."""
    learned, true = episode_theta_r(metrics, last)
    if len(learned) < 3:
        raise ContractViolation("need at least 3 episodes for the θ distance analysis")
    order = np.argsort(true[:, 0], kind="stable")
    pick = order[np.unique(np.linspace(0, len(order) - 1, min(n_sampled, len(order))).round().astype(int))]
    D, rho = theta_distance_matrix(learned[pick], true[pick])
    return {"distances": D, "rho": rho, "learned": learned[pick], "true": true[pick]}
