"""Ground-truth simulator for factored non-stationary MDPs.

Per step the simulator consumes (s_t, a_t) and the change factors current at
that step, and produces

    s_{t+1} = f(s_t ⊙ mask, a_t ⊙ mask, θˢ_t ⊙ mask) + noise
    r_t     = h(s_t ⊙ mask, a_t ⊙ mask, θʳ_t) + noise

so a recorded step (s, a, r, θˢ, θʳ, s_next) carries the change factors that
generated both its reward and its successor state.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation, EpisodeOverrunError
from .graph import FnMdpGraph
from .rng import substream

log = logging.getLogger(__name__)


class ActionClippedWarning(UserWarning):
    pass


# ---- change functions --------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    c: float


@dataclass(frozen=True)
class Sine:
    """offset + amp * sin(freq * i)"""

    offset: float
    amp: float
    freq: float


@dataclass(frozen=True)
class DampedSine:
    """offset + amp * base**(-ceil(i / decay_block)) * sin(freq * i)"""

    offset: float
    amp: float
    base: float
    decay_block: float
    freq: float


@dataclass(frozen=True)
class PiecewiseLinear:
    """offset + slope * |i - center|"""

    offset: float
    slope: float
    center: float


ChangeFn = Constant | Sine | DampedSine | PiecewiseLinear
_FN_KINDS = {"constant": Constant, "sine": Sine, "damped_sine": DampedSine, "piecewise_linear": PiecewiseLinear}


def change_value(fn: ChangeFn, index: int) -> float:
    if index < 0:
        raise ContractViolation(f"change index must be >= 0, got {index}")
    if isinstance(fn, Constant):
        return float(fn.c)
    if isinstance(fn, Sine):
        return fn.offset + fn.amp * math.sin(fn.freq * index)
    if isinstance(fn, DampedSine):
        return fn.offset + fn.amp * fn.base ** (-math.ceil(index / fn.decay_block)) * math.sin(fn.freq * index)
    if isinstance(fn, PiecewiseLinear):
        return fn.offset + fn.slope * abs(index - fn.center)
    raise ContractViolation(f"not a change function: {fn!r}")


def fn_to_dict(fn: ChangeFn) -> dict:
    kind = next(k for k, cls in _FN_KINDS.items() if isinstance(fn, cls))
    return {"kind": kind, **asdict(fn)}


def fn_from_dict(doc: dict) -> ChangeFn:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _FN_KINDS:
        raise ContractViolation(f"unknown change function kind {kind!r}; expected one of {sorted(_FN_KINDS)}")
    try:
        return _FN_KINDS[kind](**{k: float(v) for k, v in doc.items()})
    except TypeError as exc:
        raise ContractViolation(f"bad parameters for {kind}: {exc}") from exc


# ---- schedules -----------------------------------------------------------------

SCHEDULE_MODES = ("continuous", "across_episode", "within_episode", "explicit")


@dataclass(frozen=True)
class ChangeSchedule:
    """How the change index is derived from (lifetime step, episode, step).

    continuous:     index = t̃
    across_episode: index = episode
    within_episode: index = t // period, restarting every episode
    explicit:       index = number of changepoints <= t̃
    """

    mode: str = "across_episode"
    period: int = 1
    changepoints: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ContractViolation(f"unknown schedule mode {self.mode!r}")
        if self.mode == "within_episode" and self.period < 1:
            raise ContractViolation("within_episode schedule needs period >= 1")
        cps = tuple(int(c) for c in self.changepoints)
        if any(b <= a for a, b in zip(cps, cps[1:])) or any(c < 0 for c in cps):
            raise ContractViolation("changepoints must be strictly increasing and nonnegative")
        object.__setattr__(self, "changepoints", cps)

    def index(self, t_tilde: int, episode: int, t: int) -> int:
        if self.mode == "continuous":
            return t_tilde
        if self.mode == "across_episode":
            return episode
        if self.mode == "within_episode":
            return t // self.period
        return int(np.searchsorted(self.changepoints, t_tilde, side="right"))

    @property
    def discrete(self) -> bool:
        return self.mode != "continuous"

    def change_points(self, horizon: int, n_steps: int) -> np.ndarray:
        """Lifetime steps 1..n_steps-1 at which the change index differs from the step before."""
        tt = np.arange(n_steps)
        idx = np.array([self.index(int(x), int(x) // horizon, int(x) % horizon) for x in tt])
        return tt[1:][idx[1:] != idx[:-1]]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "period": self.period, "changepoints": list(self.changepoints)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ChangeSchedule":
        return cls(doc.get("mode", "across_episode"), int(doc.get("period", 1)), tuple(doc.get("changepoints", ())))


# ---- function families -----------------------------------------------------

def _check_support(name: str, w: np.ndarray, mask: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != mask.shape:
        raise ContractViolation(f"{name} has shape {w.shape}, mask has {mask.shape}")
    if np.any(w[mask == 0] != 0):
        raise ContractViolation(f"{name} has weight on a masked-out edge")
    return w


@dataclass(frozen=True, eq=False)
class LinearGaussian:
    """s' = W_ss s + W_as a + W_ts θˢ + b_s;  r = w_sr·s + w_ar·a + w_tr·θʳ + b_r."""

    W_ss: np.ndarray
    W_as: np.ndarray
    W_ts: np.ndarray
    b_s: np.ndarray
    w_sr: np.ndarray
    w_ar: np.ndarray
    w_tr: np.ndarray
    b_r: float = 0.0
    kind = "linear"

    def validate(self, g: FnMdpGraph) -> None:
        _check_support("W_ss", self.W_ss, g.Css)
        _check_support("W_as", self.W_as, g.Cas)
        _check_support("W_ts", self.W_ts, g.Cts)
        _check_support("w_sr", self.w_sr, g.csr)
        _check_support("w_ar", self.w_ar, g.car)
        if np.shape(self.b_s) != (g.d,) or np.shape(self.w_tr) != (g.q,):
            raise ContractViolation("b_s or w_tr has the wrong length")

    def dynamics(self, s, a, ts):
        return self.W_ss @ s + self.W_as @ a + self.W_ts @ ts + self.b_s

    def reward(self, s, a, tr):
        return float(self.w_sr @ s + self.w_ar @ a + self.w_tr @ tr + self.b_r)


@dataclass(frozen=True, eq=False)
class MlpFamily:
    """One tanh hidden layer per equation; masked inputs get zero first-layer weight.

    Inputs are concatenated as (s, a, θˢ) for the state equations and
    (s, a, θʳ) for the reward.
    """

    W1: np.ndarray   # (d, H, d+m+p)
    b1: np.ndarray   # (d, H)
    w2: np.ndarray   # (d, H)
    b2: np.ndarray   # (d,)
    R1: np.ndarray   # (H, d+m+q)
    c1: np.ndarray   # (H,)
    r2: np.ndarray   # (H,)
    c2: float = 0.0
    kind = "mlp"

    def validate(self, g: FnMdpGraph) -> None:
        din = np.concatenate([g.Css, g.Cas, g.Cts], axis=1)
        if self.W1.shape[0] != g.d or self.W1.shape[2] != din.shape[1]:
            raise ContractViolation("MLP state weights do not match graph dimensions")
        if np.any(self.W1[np.broadcast_to(din[:, None, :] == 0, self.W1.shape)] != 0):
            raise ContractViolation("MLP state weights touch a masked-out input")
        rin = np.concatenate([g.csr, g.car, np.ones(g.q, np.uint8)])
        if self.R1.shape[1] != rin.size or np.any(self.R1[:, rin == 0] != 0):
            raise ContractViolation("MLP reward weights touch a masked-out input")

    def dynamics(self, s, a, ts):
        x = np.concatenate([s, a, ts])
        h = np.tanh(self.W1 @ x + self.b1)
        return np.sum(self.w2 * h, axis=1) + self.b2

    def reward(self, s, a, tr):
        h = np.tanh(self.R1 @ np.concatenate([s, a, tr]) + self.c1)
        return float(self.r2 @ h + self.c2)


@dataclass(frozen=True, eq=False)
class TrackingFamily:
    """Linear dynamics; reward -|s[v_index] - θʳ_0| - action_cost * ||a||."""

    W_ss: np.ndarray
    W_as: np.ndarray
    W_ts: np.ndarray
    b_s: np.ndarray
    v_index: int = 1
    action_cost: float = 0.05
    kind = "tracking"

    def validate(self, g: FnMdpGraph) -> None:
        _check_support("W_ss", self.W_ss, g.Css)
        _check_support("W_as", self.W_as, g.Cas)
        _check_support("W_ts", self.W_ts, g.Cts)
        if not g.csr[self.v_index] or g.q < 1 or not g.car.all():
            raise ContractViolation("tracking reward needs csr[v_index], all car entries and q >= 1")

    def dynamics(self, s, a, ts):
        return self.W_ss @ s + self.W_as @ a + self.W_ts @ ts + self.b_s

    def reward(self, s, a, tr):
        return float(-abs(s[self.v_index] - tr[0]) - self.action_cost * np.linalg.norm(a))


Family = LinearGaussian | MlpFamily | TrackingFamily
_FAMILIES = {"linear": LinearGaussian, "mlp": MlpFamily, "tracking": TrackingFamily}


def _family_to_dict(fam: Family) -> dict:
    out = {"kind": fam.kind}
    for k, v in fam.__dict__.items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _family_from_dict(doc: dict) -> Family:
    doc = dict(doc)
    cls = _FAMILIES.get(doc.pop("kind", None))
    if cls is None:
        raise ContractViolation("unknown function family")
    scalars = {"b_r", "c2", "v_index", "action_cost"}
    return cls(**{k: (v if k in scalars else np.asarray(v, dtype=np.float64)) for k, v in doc.items()})


def _signed_uniform(rng, shape, lo, hi):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _stabilize(W: np.ndarray, radius: float) -> np.ndarray:
    if W.size == 0:
        return W
    rho = max(abs(np.linalg.eigvals(W)))
    return W * (radius / rho) if rho > radius else W


def random_linear_gaussian(g: FnMdpGraph, rng: np.random.Generator, lo: float = 0.4, hi: float = 0.9,
                           radius: float = 0.8) -> LinearGaussian:
    """Weights with magnitudes in [lo, hi] on every mask entry, state block scaled to spectral radius <= radius."""
    d, m, p, q = g.dims
    W_ss = _stabilize(_signed_uniform(rng, (d, d), lo, hi) * g.Css, radius)
    return LinearGaussian(W_ss, _signed_uniform(rng, (d, m), lo, hi) * g.Cas,
                          _signed_uniform(rng, (d, p), lo, hi) * g.Cts, np.zeros(d),
                          _signed_uniform(rng, d, lo, hi) * g.csr, _signed_uniform(rng, m, lo, hi) * g.car,
                          _signed_uniform(rng, q, lo, hi), 0.0)


def random_mlp_family(g: FnMdpGraph, rng: np.random.Generator, hidden: int = 8) -> MlpFamily:
    d, m, p, q = g.dims
    din = np.concatenate([g.Css, g.Cas, g.Cts], axis=1).astype(float)
    W1 = rng.normal(size=(d, hidden, d + m + p)) * din[:, None, :]
    rin = np.concatenate([g.csr, g.car, np.ones(q)]).astype(float)
    R1 = rng.normal(size=(hidden, d + m + q)) * rin[None, :]
    return MlpFamily(W1, rng.normal(size=(d, hidden)) * 0.5, rng.normal(size=(d, hidden)) / math.sqrt(hidden),
                     np.zeros(d), R1, rng.normal(size=hidden) * 0.5, rng.normal(size=hidden) / math.sqrt(hidden), 0.0)


# ---- environment spec ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkovTheta:
    """θ_k = A θ_{k-1} + sigma * ε, advanced once per change-index increment.

    A_s and A_r must be supported on Ctt_s and Ctt_r.
    """

    A_s: np.ndarray
    A_r: np.ndarray
    sigma: float = 1.0


@dataclass(frozen=True, eq=False)
class EnvSpec:
    graph: FnMdpGraph
    family: Family
    horizon: int
    dyn_schedule: ChangeSchedule = ChangeSchedule()
    dyn_fns: tuple[ChangeFn, ...] = ()
    rew_schedule: ChangeSchedule = ChangeSchedule()
    rew_fns: tuple[ChangeFn, ...] = ()
    sigma_s: float | np.ndarray = 0.1
    sigma_r: float = 0.1
    init_scale: float = 0.1
    mechanism_change: bool = False
    theta_process: str = "schedule"
    markov: MarkovTheta | None = None

    def __post_init__(self):
        g = self.graph
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        self.family.validate(g)
        if self.theta_process == "schedule":
            if len(self.dyn_fns) != g.p or len(self.rew_fns) != g.q:
                raise ContractViolation(f"need {g.p} dynamics and {g.q} reward change functions, "
                                        f"got {len(self.dyn_fns)} and {len(self.rew_fns)}")
        elif self.theta_process == "markov":
            if self.markov is None:
                raise ContractViolation("markov theta process needs transition matrices")
            _check_support("A_s", self.markov.A_s, g.Ctt_s)
            _check_support("A_r", self.markov.A_r, g.Ctt_r)
        else:
            raise ContractViolation(f"unknown theta_process {self.theta_process!r}")
        sig = np.broadcast_to(np.asarray(self.sigma_s, dtype=np.float64), (g.d,)).copy()
        object.__setattr__(self, "sigma_s", sig)
        object.__setattr__(self, "dyn_fns", tuple(self.dyn_fns))
        object.__setattr__(self, "rew_fns", tuple(self.rew_fns))

    @property
    def d(self) -> int:
        return self.graph.d

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def p(self) -> int:
        return self.graph.p

    @property
    def q(self) -> int:
        return self.graph.q

    def scheduled_theta(self, t_tilde: int, episode: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        ks = self.dyn_schedule.index(t_tilde, episode, t)
        kr = self.rew_schedule.index(t_tilde, episode, t)
        return (np.array([change_value(f, ks) for f in self.dyn_fns]),
                np.array([change_value(f, kr) for f in self.rew_fns]))

    def with_(self, **kw) -> "EnvSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        doc = {
            "graph": self.graph.to_dict(),
            "family": _family_to_dict(self.family),
            "horizon": self.horizon,
            "dyn_schedule": self.dyn_schedule.to_dict(),
            "dyn_fns": [fn_to_dict(f) for f in self.dyn_fns],
            "rew_schedule": self.rew_schedule.to_dict(),
            "rew_fns": [fn_to_dict(f) for f in self.rew_fns],
            "sigma_s": self.sigma_s.tolist(),
            "sigma_r": self.sigma_r,
            "init_scale": self.init_scale,
            "mechanism_change": self.mechanism_change,
            "theta_process": self.theta_process,
        }
        if self.markov is not None:
            doc["markov"] = {"A_s": self.markov.A_s.tolist(), "A_r": self.markov.A_r.tolist(),
                             "sigma": self.markov.sigma}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvSpec":
        g = FnMdpGraph.from_dict(doc["graph"])
        markov = None
        if "markov" in doc:
            mk = doc["markov"]
            markov = MarkovTheta(np.asarray(mk["A_s"], float).reshape(g.p, g.p),
                                 np.asarray(mk["A_r"], float).reshape(g.q, g.q), float(mk["sigma"]))
        return cls(g, _family_from_dict(doc["family"]), int(doc["horizon"]),
                   ChangeSchedule.from_dict(doc["dyn_schedule"]), tuple(fn_from_dict(f) for f in doc["dyn_fns"]),
                   ChangeSchedule.from_dict(doc["rew_schedule"]), tuple(fn_from_dict(f) for f in doc["rew_fns"]),
                   np.asarray(doc["sigma_s"], float), float(doc["sigma_r"]), float(doc["init_scale"]),
                   bool(doc["mechanism_change"]), doc.get("theta_process", "schedule"), markov)


def random_markov_theta(g: FnMdpGraph, rng: np.random.Generator, lo: float = 0.4, hi: float = 0.9,
                        radius: float = 0.9, sigma: float = 1.0) -> MarkovTheta:
    return MarkovTheta(_stabilize(_signed_uniform(rng, (g.p, g.p), lo, hi) * g.Ctt_s, radius),
                       _stabilize(_signed_uniform(rng, (g.q, g.q), lo, hi) * g.Ctt_r, radius), sigma)


# ---- state and stepping ----------------------------------------------------

@dataclass
class EnvState:
    s: np.ndarray
    theta_s: np.ndarray
    theta_r: np.ndarray
    t: int
    t_tilde: int
    episode: int
    rng: np.random.Generator
    action_mask: np.ndarray
    dyn_index: int = -1
    rew_index: int = -1
    n_clipped: int = 0

    def clone(self) -> "EnvState":
        return copy.deepcopy(self)


def new_state(spec: EnvSpec, seed: int) -> EnvState:
    """A state positioned before the first episode; call reset() to start."""
    return EnvState(np.zeros(spec.d), np.zeros(spec.p), np.zeros(spec.q), spec.horizon, -spec.horizon, -1,
                    substream(seed, "env"), np.ones(spec.m))


def _refresh_theta(state: EnvState, spec: EnvSpec) -> None:
    if spec.theta_process == "schedule":
        state.theta_s, state.theta_r = spec.scheduled_theta(state.t_tilde, state.episode, state.t)
        return
    ks = spec.dyn_schedule.index(state.t_tilde, state.episode, state.t)
    kr = spec.rew_schedule.index(state.t_tilde, state.episode, state.t)
    mk = spec.markov
    if state.dyn_index < 0:
        state.theta_s = state.rng.normal(size=spec.p) * mk.sigma
    elif ks != state.dyn_index:
        state.theta_s = mk.A_s @ state.theta_s + mk.sigma * state.rng.normal(size=spec.p)
    if state.rew_index < 0:
        state.theta_r = state.rng.normal(size=spec.q) * mk.sigma
    elif kr != state.rew_index:
        state.theta_r = mk.A_r @ state.theta_r + mk.sigma * state.rng.normal(size=spec.q)
    state.dyn_index, state.rew_index = ks, kr


def reset(state: EnvState, spec: EnvSpec) -> EnvState:
    """Start the next episode: fresh s₀, lifetime clock continues at episode·H."""
    if state.t != spec.horizon:
        raise ContractViolation(f"reset called mid-episode (t={state.t}, H={spec.horizon})")
    state.episode += 1
    state.t = 0
    state.t_tilde = state.episode * spec.horizon
    state.s = spec.init_scale * state.rng.standard_normal(spec.d)
    if spec.mechanism_change and spec.m > 0:
        state.action_mask = np.ones(spec.m)
        state.action_mask[state.rng.integers(spec.m)] = 0.0
    _refresh_theta(state, spec)
    return state


def step(state: EnvState, spec: EnvSpec, a: Sequence[float]) -> tuple[EnvState, np.ndarray, float]:
    """Advance one step in place; returns (state, s_next, r)."""
    if state.t >= spec.horizon:
        raise EpisodeOverrunError(f"step at t={state.t} with horizon {spec.horizon}; call reset()")
    a = np.asarray(a, dtype=np.float64).reshape(spec.m)
    clipped = np.clip(a, -1.0, 1.0)
    if not np.array_equal(clipped, a):
        state.n_clipped += 1
        warnings.warn(f"action {a} outside [-1, 1] was clipped", ActionClippedWarning, stacklevel=2)
    a_eff = clipped * state.action_mask
    s_next = spec.family.dynamics(state.s, a_eff, state.theta_s) + spec.sigma_s * state.rng.standard_normal(spec.d)
    r = spec.family.reward(state.s, a_eff, state.theta_r) + spec.sigma_r * float(state.rng.standard_normal())
    state.s = s_next
    state.t += 1
    state.t_tilde += 1
    if state.t < spec.horizon:
        _refresh_theta(state, spec)
    return state, s_next.copy(), r


# ---- tracking task -------------------------------------------------------------

@dataclass(frozen=True)
class TrackingConfig:
    """1-D velocity tracking: state (position, velocity), one action.

    velocity' = decay·v + gain·a + wind_gain·θˢ, position' = position + dt·v,
    reward = -|v - v_g| - 0.05|a| with v_g = θʳ.
    """

    horizon: int = 50
    decay: float = 0.5
    gain: float = 1.5
    dt: float = 0.1
    wind_gain: float = 0.05
    sigma_s: float = 0.05
    sigma_r: float = 0.0
    init_scale: float = 0.1
    reward_fn: ChangeFn = Sine(1.5, 1.5, 0.2)
    reward_schedule: ChangeSchedule = ChangeSchedule("across_episode")
    wind_fn: ChangeFn = Constant(0.0)
    wind_schedule: ChangeSchedule = ChangeSchedule("across_episode")
    mechanism_change: bool = False


def make_tracking_env(config: TrackingConfig | None = None) -> EnvSpec:
    c = config or TrackingConfig()
    g = FnMdpGraph(2, 1, 1, 1,
                   Css=np.array([[1, 1], [0, 1]]), Cas=np.array([[0], [1]]), Cts=np.array([[0], [1]]),
                   csr=np.array([0, 1]), car=np.array([1]), Ctt_s=np.zeros((1, 1)), Ctt_r=np.zeros((1, 1)))
    fam = TrackingFamily(np.array([[1.0, c.dt], [0.0, c.decay]]), np.array([[0.0], [c.gain]]),
                         np.array([[0.0], [c.wind_gain]]), np.zeros(2), v_index=1, action_cost=0.05)
    return EnvSpec(g, fam, c.horizon, c.wind_schedule, (c.wind_fn,), c.reward_schedule, (c.reward_fn,),
                   sigma_s=c.sigma_s, sigma_r=c.sigma_r, init_scale=c.init_scale,
                   mechanism_change=c.mechanism_change)


# ---- trajectories ----------------------------------------------------------------

@dataclass
class Trajectory:
    """One episode; row t holds the step taken from s[t]."""

    episode: int
    t: np.ndarray
    t_tilde: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    theta_s: np.ndarray | None = None
    theta_r: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.r)

    def without_theta(self) -> "Trajectory":
        return replace(self, theta_s=None, theta_r=None)


Policy = Callable[[np.ndarray, EnvState], np.ndarray]


def uniform_policy(rng: np.random.Generator, m: int) -> Policy:
    return lambda s, state: rng.uniform(-1.0, 1.0, size=m)


def rollout_episode(spec: EnvSpec, state: EnvState, policy: Policy, record_theta: bool = True) -> Trajectory:
    reset(state, spec)
    H = spec.horizon
    buf = {"s": np.zeros((H, spec.d)), "a": np.zeros((H, spec.m)), "r": np.zeros(H),
           "s_next": np.zeros((H, spec.d)), "theta_s": np.zeros((H, spec.p)), "theta_r": np.zeros((H, spec.q)),
           "t_tilde": np.zeros(H, dtype=np.int64)}
    for t in range(H):
        buf["s"][t] = state.s
        buf["theta_s"][t] = state.theta_s
        buf["theta_r"][t] = state.theta_r
        buf["t_tilde"][t] = state.t_tilde
        a = np.asarray(policy(state.s, state), dtype=np.float64)
        buf["a"][t] = np.clip(a, -1.0, 1.0)
        _, s_next, r = step(state, spec, a)
        buf["s_next"][t] = s_next
        buf["r"][t] = r
    tr = Trajectory(state.episode, np.arange(H), buf["t_tilde"], buf["s"], buf["a"], buf["r"], buf["s_next"])
    if record_theta:
        tr.theta_s, tr.theta_r = buf["theta_s"], buf["theta_r"]
    return tr


def collect_trajectories(spec: EnvSpec, policy: Policy | None, n_episodes: int, record_theta: bool = True,
                         *, seed: int = 0, state: EnvState | None = None) -> list[Trajectory]:
    """Roll out ``n_episodes`` consecutive episodes.

    ``policy=None`` draws actions uniformly from [-1, 1]. Passing ``state``
    continues an existing lifetime; otherwise a fresh one is started from seed.
    """
    if state is None:
        state = new_state(spec, seed)
    if policy is None:
        policy = uniform_policy(substream(seed, "uniform-policy"), spec.m)
    return [rollout_episode(spec, state, policy, record_theta) for _ in range(n_episodes)]


# ---- serialization ---------------------------------------------------------

def write_jsonl(trajs: Iterable[Trajectory], path: str | Path) -> None:
    with open(path, "w") as fh:
        for tr in trajs:
            for k in range(len(tr)):
                row = {"t_tilde": int(tr.t_tilde[k]), "episode": int(tr.episode), "t": int(tr.t[k]),
                       "s": tr.s[k].tolist(), "a": tr.a[k].tolist(), "r": float(tr.r[k]),
                       "s_next": tr.s_next[k].tolist()}
                if tr.theta_s is not None:
                    row["theta_s"] = tr.theta_s[k].tolist()
                    row["theta_r"] = tr.theta_r[k].tolist()
                fh.write(json.dumps(row) + "\n")


def read_jsonl(path: str | Path) -> list[Trajectory]:
    episodes: dict[int, list[dict]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ContractViolation(f"{path}:{lineno}: {exc.msg}") from exc
            episodes.setdefault(int(row["episode"]), []).append(row)
    out = []
    for ep in sorted(episodes):
        rows = sorted(episodes[ep], key=lambda r: r["t"])
        has_theta = all("theta_s" in r for r in rows)
        tr = Trajectory(ep, np.array([r["t"] for r in rows]), np.array([r["t_tilde"] for r in rows]),
                        np.array([r["s"] for r in rows], float), np.array([r["a"] for r in rows], float),
                        np.array([r["r"] for r in rows], float), np.array([r["s_next"] for r in rows], float))
        if has_theta:
            tr.theta_s = np.array([r["theta_s"] for r in rows], float).reshape(len(rows), -1)
            tr.theta_r = np.array([r["theta_r"] for r in rows], float).reshape(len(rows), -1)
        out.append(tr)
    return out
