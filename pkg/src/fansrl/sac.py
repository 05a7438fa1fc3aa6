"""Soft actor-critic on compact inputs, and the replay buffer it samples from."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numkit as nk
from .checkpoint import read_container, write_container
from .errors import ContractViolation, NumericalError
from .numkit import Adam, Mlp, Module, Tape, Tensor, grad
from .rng import substream

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SacConfig:
    hidden: int = 64
    layers: int = 2
    discount: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    init_log_alpha: float = 0.0
    # None: learn the temperature toward target entropy -m
    fixed_alpha: float | None = None
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ContractViolation("Polyak rate must lie in (0, 1]")
        if not 0.0 <= self.discount < 1.0:
            raise ContractViolation("discount must lie in [0, 1)")


class SacParams(Module):
    """Actor, twin critics, their Polyak targets and the log-temperature."""

    def __init__(self, n_in: int, m: int, cfg: SacConfig = SacConfig()):
        super().__init__()
        if n_in < 0 or m < 1:
            raise ContractViolation("SAC needs n_in >= 0 and m >= 1")
        self.n_in, self.m, self.cfg = n_in, m, cfg
        rng = substream(cfg.seed, "sac-init")
        hid = [cfg.hidden] * cfg.layers
        mk = lambda sizes: Mlp(sizes, rng, activation="relu", init="normal", init_scale=cfg.init_scale)  # noqa: E731
        self.actor = self.add_child("actor", mk([max(n_in, 1)] + hid + [2 * m]))
        self.critic1 = self.add_child("critic1", mk([max(n_in, 1) + m] + hid + [1]))
        self.critic2 = self.add_child("critic2", mk([max(n_in, 1) + m] + hid + [1]))
        self.target1 = self.add_child("target1", mk([max(n_in, 1) + m] + hid + [1]))
        self.target2 = self.add_child("target2", mk([max(n_in, 1) + m] + hid + [1]))
        for src, dst in ((self.critic1, self.target1), (self.critic2, self.target2)):
            for (k, v) in src.named_params().items():
                dst.set_param(k, v.data)
        self.log_alpha = self.add_param("log_alpha", np.array(float(cfg.init_log_alpha)))

    def obs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ContractViolation(f"policy input has {x.shape[-1]} features, expected {self.n_in}")
        if self.n_in == 0:
            # nothing observable: a constant input keeps the nets well-formed
            return np.ones(x.shape[:-1] + (1,))
        return x

    @property
    def alpha(self) -> float:
        if self.cfg.fixed_alpha is not None:
            return float(self.cfg.fixed_alpha)
        return float(np.exp(self.log_alpha.data))

    def save(self, path) -> None:
        meta = {"kind": "sac", "n_in": self.n_in, "m": self.m, "config": asdict(self.cfg)}
        write_container(path, {"sac": {k: v.data for k, v in self.named_params().items()}}, meta)

    @classmethod
    def load(cls, path) -> "SacParams":
        meta, sections = read_container(path)
        if meta.get("kind") != "sac":
            raise ContractViolation(f"{path}: not a SAC checkpoint")
        out = cls(meta["n_in"], meta["m"], SacConfig(**meta["config"]))
        for k, v in sections["sac"].items():
            out.set_param(k, v)
        return out


def _split(out, m: int):
    return out[..., :m], nk.clip(out[..., m:], LOG_STD_MIN, LOG_STD_MAX)


def tanh_gaussian_sample(mean, log_std, eps) -> tuple[Tensor, Tensor]:
    """Squashed reparameterized action and its log-density (summed over action dims)."""
    u = mean + nk.exp(log_std) * eps
    a = nk.tanh(u)
    # -log(1 - tanh(u)^2) = 2 (softplus(-2u) + u - log 2), stable for large |u|
    log_det = (nk.softplus(u * -2.0) + u - math.log(2.0)) * 2.0
    logp = (log_std * -1.0 - nk.square(Tensor(eps)) * 0.5 - _HALF_LOG_2PI + log_det).sum(axis=-1)
    return a, logp


def act(params: SacParams, x, deterministic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Action in [-1, 1]^m for a single input vector or a stack of rows."""
    obs = params.obs(x)
    out = params.actor.forward_numpy(obs)
    m = params.m
    mean, log_std = out[..., :m], np.clip(out[..., m:], LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        return np.tanh(mean)
    if rng is None:
        raise ContractViolation("stochastic actions need an rng")
    return np.tanh(mean + np.exp(log_std) * rng.standard_normal(mean.shape))


def _q(net: Mlp, obs, a) -> Tensor:
    return net(nk.concat([obs, a], axis=-1))[..., 0]


def critic_loss(params: SacParams, batch: dict, eps_next: np.ndarray) -> Tensor:
    """0.5 Σ_i mean (Q_i(s, a) - y)^2 with the soft target y held fixed."""
    obs, obs2 = params.obs(batch["obs"]), params.obs(batch["obs_next"])
    out2 = params.actor.forward_numpy(obs2)
    m = params.m
    a2, logp2 = tanh_gaussian_sample(Tensor(out2[..., :m]),
                                     Tensor(np.clip(out2[..., m:], LOG_STD_MIN, LOG_STD_MAX)), eps_next)
    qa = np.concatenate([obs2, a2.data], axis=-1)
    q_t = np.minimum(params.target1.forward_numpy(qa), params.target2.forward_numpy(qa))[..., 0]
    y = batch["r"] + params.cfg.discount * (1.0 - batch["done"]) * (q_t - params.alpha * logp2.data)
    loss = Tensor(0.0)
    for net in (params.critic1, params.critic2):
        loss = loss + nk.square(_q(net, obs, batch["a"]) - y).mean() * 0.5
    return loss


def actor_loss(params: SacParams, batch: dict, eps: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """mean(α log π(ã|s) - min_i Q_i(s, ã)); also returns log π for the temperature step."""
    obs = params.obs(batch["obs"])
    mean, log_std = _split(params.actor(obs), params.m)
    a, logp = tanh_gaussian_sample(mean, log_std, eps)
    q = nk.minimum(_q(params.critic1, obs, a), _q(params.critic2, obs, a))
    return (logp * params.alpha - q).mean(), logp.data


def temperature_loss(params: SacParams, logp: np.ndarray) -> Tensor:
    """-log α · mean(log π + target entropy), with target entropy -m."""
    return params.log_alpha * -float(np.mean(logp) - params.m)


def polyak(params: SacParams, tau: float) -> None:
    for src, dst in ((params.critic1, params.target1), (params.critic2, params.target2)):
        for (k, v), t in zip(src.named_params().items(), dst.params()):
            t.data = (1.0 - tau) * t.data + tau * v.data


# ---- fused route ------------------------------------------------------------------
# Hand-written backprop for the relu MLPs above. Same eps in, same gradients out
# as the tape route; it skips per-op bookkeeping, which dominates at these sizes.

def _mlp_forward(net: Mlp, x: np.ndarray):
    hs = [x]
    h = x
    for i in range(net.n_layers):
        h = h @ net._params[f"W{i}"].data + net._params[f"b{i}"].data
        if i < net.n_layers - 1:
            h = np.maximum(h, 0.0)
        hs.append(h)
    return h, hs


def _mlp_backward(net: Mlp, hs, g: np.ndarray, want_params: bool = True):
    """Gradients for W0, b0, W1, ... (in params() order) and for the input."""
    out = [None] * (2 * net.n_layers)
    for i in reversed(range(net.n_layers)):
        if i < net.n_layers - 1:
            g = g * (hs[i + 1] > 0)
        if want_params:
            out[2 * i] = hs[i].T @ g
            out[2 * i + 1] = g.sum(axis=0)
        g = g @ net._params[f"W{i}"].data.T
    return out, g


def _soft_target(params: SacParams, batch: dict, eps_next: np.ndarray) -> np.ndarray:
    obs2 = params.obs(batch["obs_next"])
    out2 = params.actor.forward_numpy(obs2)
    m = params.m
    mean, log_std = out2[..., :m], np.clip(out2[..., m:], LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(log_std) * eps_next
    logp = (-log_std - 0.5 * eps_next ** 2 - _HALF_LOG_2PI
            + 2.0 * (np.logaddexp(0.0, -2.0 * u) + u - math.log(2.0))).sum(axis=-1)
    qa = np.concatenate([obs2, np.tanh(u)], axis=-1)
    q_t = np.minimum(params.target1.forward_numpy(qa), params.target2.forward_numpy(qa))[..., 0]
    return batch["r"] + params.cfg.discount * (1.0 - batch["done"]) * (q_t - params.alpha * logp)


def critic_grads_fused(params: SacParams, batch: dict, eps_next: np.ndarray):
    """(loss, grads over critic1.params() + critic2.params())."""
    y = _soft_target(params, batch, eps_next)
    x = np.concatenate([params.obs(batch["obs"]), np.asarray(batch["a"], dtype=np.float64)], axis=-1)
    n = len(y)
    loss, grads = 0.0, []
    for net in (params.critic1, params.critic2):
        q, hs = _mlp_forward(net, x)
        err = q[:, 0] - y
        loss += 0.5 * float(np.mean(err ** 2))
        grads += _mlp_backward(net, hs, (err / n)[:, None])[0]
    return loss, grads


def actor_grads_fused(params: SacParams, batch: dict, eps: np.ndarray):
    """(loss, grads over actor.params(), log π)."""
    obs = params.obs(batch["obs"])
    m, alpha = params.m, params.alpha
    out, hs_pi = _mlp_forward(params.actor, obs)
    n = len(out)
    mean, raw = out[:, :m], out[:, m:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * eps
    a = np.tanh(u)
    logp = (-log_std - 0.5 * eps ** 2 - _HALF_LOG_2PI
            + 2.0 * (np.logaddexp(0.0, -2.0 * u) + u - math.log(2.0))).sum(axis=-1)
    x = np.concatenate([obs, a], axis=-1)
    q1, hs1 = _mlp_forward(params.critic1, x)
    q2, hs2 = _mlp_forward(params.critic2, x)
    take1 = (q1[:, 0] <= q2[:, 0])[:, None]
    loss = float(np.mean(alpha * logp - np.where(take1[:, 0], q1[:, 0], q2[:, 0])))
    gq = -np.ones((n, 1)) / n
    g_x = (_mlp_backward(params.critic1, hs1, gq * take1, want_params=False)[1]
           + _mlp_backward(params.critic2, hs2, gq * ~take1, want_params=False)[1])
    g_a = g_x[:, -m:]
    c = alpha / n
    g_u = g_a * (1.0 - a ** 2) + c * 2.0 * a
    g_ls = (g_u * std * eps - c) * ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX))
    grads, _ = _mlp_backward(params.actor, hs_pi, np.concatenate([g_u, g_ls], axis=-1))
    return loss, grads, logp


class SacLearner:
    """Optimizers for the three losses of one SacParams."""

    def __init__(self, params: SacParams, seed: int = 0, fused: bool = True):
        self.params, self.fused = params, fused
        lr = params.cfg.lr
        self.critics = params.critic1.params() + params.critic2.params()
        self.opt_q = Adam(self.critics, lr=lr)
        self.opt_pi = Adam(params.actor.params(), lr=lr)
        self.opt_alpha = Adam([params.log_alpha], lr=lr)
        self.rng = substream(seed, "sac-update")
        self.n_updates = 0

    def update(self, batch: dict) -> dict[str, float]:
        p = self.params
        n = len(batch["r"])
        if n < 1:
            raise ContractViolation("empty SAC batch")
        eps_next, eps = self.rng.standard_normal((n, p.m)), self.rng.standard_normal((n, p.m))
        if self.fused:
            lq, gq = critic_grads_fused(p, batch, eps_next)
        else:
            with Tape():
                t = critic_loss(p, batch, eps_next)
                lq, gq = float(t.data), grad(t, self.critics)
        self.opt_q.step(gq)
        if self.fused:
            lpi, gpi, logp = actor_grads_fused(p, batch, eps)
        else:
            with Tape():
                t, logp = actor_loss(p, batch, eps)
                lpi, gpi = float(t.data), grad(t, p.actor.params())
        self.opt_pi.step(gpi)
        la = float("nan")
        if p.cfg.fixed_alpha is None:
            with Tape():
                lt = temperature_loss(p, logp)
                ga = grad(lt, [p.log_alpha])
            self.opt_alpha.step(ga)
            la = float(lt.data)
        polyak(p, p.cfg.tau)
        self.n_updates += 1
        rep = {"critic_loss": lq, "actor_loss": lpi, "temperature_loss": la,
               "alpha": p.alpha, "entropy": float(-logp.mean())}
        if not all(np.isfinite(v) for k, v in rep.items() if k != "temperature_loss"):
            raise NumericalError("SAC loss is not finite",
                                 {"report": rep, "params": {k: v.data.copy() for k, v in p.named_params().items()}})
        return rep


def sac_update(learner: SacLearner, batch: dict) -> dict[str, float]:
    return learner.update(batch)


# ---- replay buffer ----------------------------------------------------------------

class ReplayBuffer:
    """FIFO ring of transitions with lifetime indices.

    Fields: s, a, r, theta_s, theta_r, s_next, theta_s_next, theta_r_next,
    done, t_tilde, episode, t.
    """

    def __init__(self, capacity: int, d: int, m: int, p: int, q: int):
        if capacity < 1:
            raise ContractViolation("capacity must be >= 1")
        self.capacity = capacity
        shapes = {"s": (d,), "a": (m,), "r": (), "theta_s": (p,), "theta_r": (q,), "s_next": (d,),
                  "theta_s_next": (p,), "theta_r_next": (q,), "done": ()}
        self.data = {k: np.zeros((capacity,) + sh) for k, sh in shapes.items()}
        for k in ("t_tilde", "episode", "t"):
            self.data[k] = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, **rec) -> None:
        if set(rec) != set(self.data):
            raise ContractViolation(f"record fields {sorted(rec)} != {sorted(self.data)}")
        for k, v in rec.items():
            self.data[k][self.head] = v
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        start = (self.head - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size < batch_size:
            raise ContractViolation(f"buffer holds {self.size} records, batch needs {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return {k: v[idx] for k, v in self.data.items()}

    def ordered(self) -> dict[str, np.ndarray]:
        o = self._order()
        return {k: v[o] for k, v in self.data.items()}

    def contiguous(self, k: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """k records with consecutive lifetime index, chosen uniformly among valid runs."""
        rec = self.ordered()
        tt = rec["t_tilde"]
        if self.size < k:
            raise ContractViolation(f"buffer holds {self.size} records, need {k} consecutive")
        ok = np.ones(self.size - k + 1, dtype=bool)
        if k > 1:
            step = np.append(tt[1:] == tt[:-1] + 1, False).astype(np.int64)
            run = np.convolve(step[:-1], np.ones(k - 1, dtype=np.int64), mode="valid")
            ok = run == k - 1
        starts = np.flatnonzero(ok)
        if starts.size == 0:
            raise ContractViolation(f"no run of {k} consecutive records")
        s0 = int(rng.choice(starts))
        return {key: v[s0:s0 + k] for key, v in rec.items()}
