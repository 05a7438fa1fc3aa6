"""Environment factories for the identification benches."""

from __future__ import annotations

import numpy as np

from .env import ChangeSchedule, Constant, EnvSpec, Sine, random_linear_gaussian, random_markov_theta, \
    random_mlp_family
from .graph import FnMdpGraph, random_fnmdp_graph
from .rng import substream

# frequencies shared with the default surrogate basis so sinusoidal θ is spanned exactly
DEFAULT_FREQS = (0.005, 0.05, 0.2)


def ident_bench(seed: int, d: int = 4, m: int = 1, p: int = 2, q: int = 1, density: float = 0.4,
                sigma: float = 0.3, horizon: int = 50, theta: str = "markov", reward_varying: bool = True,
                family: str = "linear", freqs=DEFAULT_FREQS, graph: FnMdpGraph | None = None) -> EnvSpec:
    """A random FN-MDP for structure recovery.

    theta="markov": θ follows a masked linear-Gaussian AR(1) over Ctt, advanced
    every step, so Ctt is identifiable when θ is observed.
    theta="sine": θ components are sinusoids of the lifetime index with
    frequencies from ``freqs``; reward_varying=False holds θʳ constant.
    """
    g = graph if graph is not None else random_fnmdp_graph(seed, d, m, p, q, density)
    wrng = substream(seed, "bench-weights")
    fam = random_linear_gaussian(g, wrng) if family == "linear" else random_mlp_family(g, wrng)
    cont = ChangeSchedule("continuous")
    if theta == "markov":
        return EnvSpec(g, fam, horizon, cont, (), cont, (), sigma_s=sigma, sigma_r=sigma, init_scale=1.0,
                       theta_process="markov", markov=random_markov_theta(g, substream(seed, "bench-theta")))
    if theta != "sine":
        raise ValueError(f"unknown theta kind {theta!r}")
    frng = substream(seed, "bench-freqs")
    dyn = tuple(Sine(0.0, 1.0, float(freqs[k % len(freqs)])) for k in frng.permutation(max(g.p, 1))[:g.p])
    if reward_varying:
        rew = tuple(Sine(0.0, 1.0, float(freqs[(l + 1) % len(freqs)])) for l in range(g.q))
    else:
        rew = tuple(Constant(0.5) for _ in range(g.q))
    return EnvSpec(g, fam, horizon, cont, dyn, cont, rew, sigma_s=sigma, sigma_r=sigma, init_scale=1.0)


def with_stationary_dynamics(spec: EnvSpec) -> EnvSpec:
    """Same env with every θˢ held constant."""
    return spec.with_(dyn_fns=tuple(Constant(0.5) for _ in spec.dyn_fns))


def hide_theta(trajs):
    return [tr.without_theta() for tr in trajs]


def n_episodes_for(n_transitions: int, horizon: int) -> int:
    return int(np.ceil(n_transitions / horizon))
