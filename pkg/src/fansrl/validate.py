"""Self-contained invariant suite behind ``fansrl validate``.

Each check compares a fast code path with an independent slow one (or with a
closed form) on a few random instances. It is a smoke-level guard for an
installed copy; the pytest suite in the repository is the full version.
"""

from __future__ import annotations

import math
import time
from collections import deque

import numpy as np

from .env import ChangeSchedule, DampedSine, PiecewiseLinear, Sine, TrackingConfig, change_value, \
    make_tracking_env
from .graph import Dag, compact_representation, d_separated, random_fnmdp_graph, unroll
from .numkit import GaussianHead, Tape, Tensor, grad, kl_diag_gaussians
from .rng import substream


def _moral_dsep(dag: Dag, x: int, y: int, Z: set[int]) -> bool:
    """d-separation by the ancestral moral graph criterion."""
    keep = set(np.flatnonzero(dag.ancestors([x, y, *Z])).tolist())
    adj = {v: set() for v in keep}
    for v in keep:
        ps = [int(p) for p in dag.parents(v) if int(p) in keep]
        for p in ps:
            adj[v].add(p)
            adj[p].add(v)
        for i, a in enumerate(ps):
            for b in ps[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
    seen, queue = {x}, deque([x])
    while queue:
        v = queue.popleft()
        if v == y:
            return False
        for w in adj[v]:
            if w not in seen and w not in Z:
                seen.add(w)
                queue.append(w)
    return True


def check_dsep(n_graphs: int = 40) -> str:
    rng = substream(0, "validate-dsep")
    n_q = 0
    for _ in range(n_graphs):
        n = int(rng.integers(3, 8))
        order = rng.permutation(n)
        edges = [(int(order[i]), int(order[j])) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35]
        dag = Dag(n, edges)
        for _ in range(10):
            x, y = (int(v) for v in rng.choice(n, 2, replace=False))
            Z = {int(v) for v in rng.permutation([v for v in range(n) if v not in (x, y)])[:rng.integers(0, n - 1)]}
            if d_separated(dag, [x], [y], sorted(Z)) != _moral_dsep(dag, x, y, Z):
                raise AssertionError(f"d-separation mismatch on {edges} for {x}, {y} | {sorted(Z)}")
            n_q += 1
    return f"{n_q} queries agree with the moral-graph criterion"


def check_compact(n_graphs: int = 100) -> str:
    for seed in range(n_graphs):
        rng = substream(seed, "validate-compact")
        d, m, p, q = (int(v) for v in rng.integers(1, 5, size=4))
        g = random_fnmdp_graph(seed, d, m, p, q, float(rng.uniform(0.1, 0.6)))
        T = d + p + 2
        u = unroll(g, T)
        reach = set(np.flatnonzero(u.ancestors([u.node("r", 0, t) for t in range(T)])).tolist())
        s_min = tuple(i for i in range(d) if u.node("s", i, 0) in reach)
        th = tuple(k for k in range(p) if u.node("theta_s", k, 0) in reach) + \
            tuple(p + l for l in range(q) if u.node("theta_r", l, 0) in reach)
        c = compact_representation(g)
        if (c.s_min, c.theta_min) != (s_min, th):
            raise AssertionError(f"compact representation mismatch for seed {seed}")
    return f"{n_graphs} graphs agree with reachability on the unrolling"


def check_change_functions() -> str:
    idx = np.arange(0, 3000, 3)
    cases = [(Sine(10.0, 10.0, 0.005), lambda t: 10 + 10 * math.sin(0.005 * t)),
             (PiecewiseLinear(5.0, 0.02, 1500.0), lambda t: 5 + 0.02 * abs(t - 1500)),
             (Sine(1.0, 0.75, 0.005), lambda t: 1.0 + 0.75 * math.sin(0.005 * t)),
             (Sine(1.5, 1.5, 0.2), lambda t: 1.5 + 1.5 * math.sin(0.2 * t)),
             (DampedSine(0.0, 1.0, 2.0, 100.0, 0.1),
              lambda t: 2.0 ** (-math.ceil(t / 100.0)) * math.sin(0.1 * t))]
    for fn, ref in cases:
        err = max(abs(change_value(fn, int(t)) - ref(int(t))) for t in idx)
        if err > 1e-12:
            raise AssertionError(f"{fn!r} deviates by {err}")
    return f"{len(cases)} change functions match their formulas at {len(idx)} points"


def check_kl() -> str:
    rng = substream(0, "validate-kl")
    for _ in range(5):
        mu, lv = rng.normal(size=8), rng.normal(size=8) * 0.5
        if float(kl_diag_gaussians(GaussianHead(Tensor(mu), Tensor(lv)), GaussianHead(Tensor(mu), Tensor(lv))).data) != 0.0:
            raise AssertionError("KL of identical heads is not exactly 0")
        mu2, lv2 = rng.normal(size=8), rng.normal(size=8) * 0.5
        kl = float(kl_diag_gaussians(GaussianHead(Tensor(mu), Tensor(lv)), GaussianHead(Tensor(mu2), Tensor(lv2))).data)
        ref = 0.5 * np.sum(lv2 - lv + (np.exp(lv) + (mu - mu2) ** 2) / np.exp(lv2) - 1.0)
        if not math.isclose(kl, ref, rel_tol=1e-12):
            raise AssertionError(f"KL {kl} != closed form {ref}")
    return "closed form and identical-head zero hold"


def check_gradients() -> str:
    from .fnvae import FnVaeConfig, FnVaeParams, Stream, losses_for, make_batch
    rng = substream(0, "validate-grad")
    cfg = FnVaeConfig(2, 1, 1, 1, embed=4, lstm=3, dec_hidden=3, prior_hidden=2, seed=1)
    params = FnVaeParams(cfg)
    n = 10
    st = Stream(rng.normal(size=(n, 2)), rng.uniform(-1, 1, (n, 1)), rng.normal(size=n), rng.normal(size=(n, 2)),
                np.arange(n), np.arange(n) // 5, np.arange(n) % 5)
    worst = 0.0
    for cps in (None, np.array([4, 7])):
        batch = make_batch(st, [0, 2], 8, cps)
        eps = (rng.normal(size=(2, 8, 1)), rng.normal(size=(2, 8, 1))) if cps is None else \
            (rng.normal(size=(2, batch.seg_last.shape[1], 1)), rng.normal(size=(2, batch.seg_last.shape[1], 1)))
        tensors = params.params()
        f = lambda: losses_for(params, batch, eps=eps)["total"]  # noqa: E731
        with Tape():
            g = grad(f(), tensors)
        a, num = [], []
        for k in substream(1, "validate-grad-coords").choice(len(tensors), 12, replace=False):
            t = tensors[int(k)]
            idx = tuple(int(rng.integers(s)) for s in t.shape)
            base = t.data.copy()
            vals = []
            for sgn in (1, -1):
                x = base.copy()
                x[idx] += sgn * 1e-5
                t.data = x
                vals.append(float(f().data))
            t.data = base
            a.append(g[int(k)][idx])
            num.append((vals[0] - vals[1]) / 2e-5)
        a, num = np.array(a), np.array(num)
        worst = max(worst, float(np.linalg.norm(a - num) / max(np.linalg.norm(a), np.linalg.norm(num), 1e-8)))
    if worst > 1e-4:
        raise AssertionError(f"FN-VAE gradient relative error {worst:.2e}")
    return f"FN-VAE gradient relative error {worst:.1e}"


def check_sac() -> str:
    from .sac import SacConfig, SacParams, act, actor_grads_fused, actor_loss, critic_grads_fused, critic_loss
    rng = substream(0, "validate-sac")
    p = SacParams(3, 2, SacConfig(hidden=8, init_scale=1.0))
    a = act(p, rng.normal(size=(2000, 3)) * 10, rng=rng)
    if np.any(np.abs(a) > 1.0):
        raise AssertionError("action outside [-1, 1]")
    b = {"obs": rng.normal(size=(8, 3)), "a": rng.uniform(-1, 1, (8, 2)), "r": rng.normal(size=8),
         "obs_next": rng.normal(size=(8, 3)), "done": np.zeros(8)}
    e = rng.normal(size=(8, 2))
    with Tape():
        gt = grad(critic_loss(p, b, e), p.critic1.params() + p.critic2.params())
    gf = critic_grads_fused(p, b, e)[1]
    with Tape():
        ga = grad(actor_loss(p, b, e)[0], p.actor.params())
    gaf = actor_grads_fused(p, b, e)[1]
    err = max(float(np.max(np.abs(x - y))) for x, y in zip(gt + ga, gf + gaf))
    if err > 1e-10:
        raise AssertionError(f"fused and tape SAC gradients differ by {err}")
    return "actions bounded; fused and tape gradients agree"


def check_discrete_run() -> str:
    from .driver import RunConfig, run_fansrl
    from .fnvae import TrainConfig
    spec = make_tracking_env(TrackingConfig(horizon=10, reward_schedule=ChangeSchedule("within_episode", 4)))
    cfg = RunConfig(n_episodes=3, n_init=3, batch_size=16, refresh_every=5,
                    train=TrainConfig(epochs=5, batch=2, window=12))
    m = run_fansrl(spec, cfg, seed=0)
    buf = m.artifacts["buffer"].ordered()
    cps = set(m.artifacts["changepoints"].tolist())
    th = np.concatenate([buf["theta_s"], buf["theta_r"]], axis=1)
    for i in range(1, len(th)):
        if int(buf["t_tilde"][i]) not in cps and not np.array_equal(th[i], th[i - 1]):
            raise AssertionError(f"θ changed between change points at t̃={buf['t_tilde'][i]}")
    if not m.info["masks_frozen"]:
        raise AssertionError("masks changed during the online phase")
    if m.policy_input_dim != len(m.info["s_min"]) + len(m.info["theta_min"]):
        raise AssertionError("policy input is not the compact representation")
    return "θ constant within segments; masks frozen; compact policy input"


CHECKS = [
    ("d-separation", check_dsep),
    ("compact representation", check_compact),
    ("change functions", check_change_functions),
    ("KL divergence", check_kl),
    ("FN-VAE gradients", check_gradients),
    ("SAC", check_sac),
    ("discrete-change run", check_discrete_run),
]


def run_all(out=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            detail = fn()
            out(f"PASS  {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
        except Exception as exc:  # a crash is a failed invariant, reported like one
            ok = False
            out(f"FAIL  {name}: {type(exc).__name__}: {exc}")
    return ok
