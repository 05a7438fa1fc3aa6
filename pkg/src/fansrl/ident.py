"""Recover the FN-MDP graph from trajectories with conditional-independence tests.

Row t of a trajectory holds (s[t], a[t], r[t], θ[t], s[t+1]); θ[t] generated
both r[t] and s[t+1]. Each edge family is tested with one fixed conditioning
set that blocks every other trail in the unrolled graph:

full mode (θ observed), for rows with enough within-episode history
  s/a[t] -> s[t+1] or r[t]     | θ[t], θ[t-1], s[t-1], a[t-1]
  θ_k[t-1] -> θ_l[t]            | θ[t-2]
  θˢ_k[t] -> s_i[t+1]           | s[t], a[t], θ[t-1]

partial mode (θ hidden) replaces θ by a smooth basis of the lifetime index t̃:
  s/a[t] -> s[t+1] or r[t]     | basis(t̃[t]), s[t-1], a[t-1]
  change_affected[i]            s_i[t+1] dependent on basis(t̃[t]) | s[t], a[t]
  reward_nonstationary          r[t] dependent on basis(t̃[t]) | s[t], a[t]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special, stats

from .env import Trajectory
from .errors import ContractViolation, UnderpoweredError
from .graph import MASK_NAMES, FnMdpGraph
from .rng import substream

RIDGE = 1e-8


@dataclass(frozen=True)
class CiConfig:
    test: str = "partial_correlation"
    alpha: float = 0.01
    min_samples: int = 50
    n_perm: int = 200
    seed: int = 0
    basis_freqs: tuple[float, ...] = (0.005, 0.05, 0.2)

    def __post_init__(self):
        if self.test not in ("partial_correlation", "permutation"):
            raise ContractViolation(f"unknown CI test {self.test!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ContractViolation(f"alpha must be in (0, 1), got {self.alpha}")
        if self.min_samples < 50:
            raise ContractViolation("min_samples must be >= 50")
        if self.test == "permutation" and self.n_perm < 1:
            raise ContractViolation("permutation test needs n_perm >= 1")
        object.__setattr__(self, "basis_freqs", tuple(float(w) for w in self.basis_freqs))


class CiResult(tuple):
    """(r, p) pair; ``ridge`` is True when the regression needed the ridge fallback."""

    def __new__(cls, r: float, p: float, ridge: bool = False):
        obj = super().__new__(cls, (float(r), float(p)))
        obj.ridge = ridge
        return obj

    @property
    def r(self) -> float:
        return self[0]

    @property
    def p(self) -> float:
        return self[1]


# ---- regression primitives -------------------------------------------------

def _residualize(Z: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, bool]:
    """Residuals of each column of ``cols`` after OLS on [1, Z].

    Falls back to ridge (λ=1e-8) when [1, Z] is rank deficient.
    """
    n = cols.shape[0]
    D = np.column_stack([np.ones(n), Z]) if Z.size else np.ones((n, 1))
    beta, _, rank, _ = np.linalg.lstsq(D, cols, rcond=None)
    if rank == D.shape[1]:
        return cols - D @ beta, False
    G = D.T @ D + RIDGE * np.eye(D.shape[1])
    beta = np.linalg.solve(G, D.T @ cols)
    return cols - D @ beta, True


def _check_power(n: int, k: int, cfg: CiConfig) -> None:
    need = max(cfg.min_samples, k + 4)
    if n < need:
        raise UnderpoweredError(n, need)


def _fisher_p(r: np.ndarray, n: int, k: int) -> np.ndarray:
    r = np.clip(r, -1.0 + 1e-15, 1.0 - 1e-15)
    z = np.arctanh(r) * math.sqrt(n - k - 3)
    return special.erfc(np.abs(z) / math.sqrt(2.0))


def _corr_cols(rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
    """Correlation between every column of rx and every column of ry."""
    nx = np.linalg.norm(rx, axis=0)
    ny = np.linalg.norm(ry, axis=0)
    denom = np.outer(nx, ny)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (rx.T @ ry) / denom
    return np.where(denom > 0, r, 0.0)


def _perm_p(rx: np.ndarray, ry: np.ndarray, r_obs: np.ndarray, cfg: CiConfig, tag: str) -> np.ndarray:
    rng = substream(cfg.seed, "perm", tag)
    exceed = np.zeros_like(r_obs)
    for _ in range(cfg.n_perm):
        exceed += np.abs(_corr_cols(rx[rng.permutation(len(rx))], ry)) >= np.abs(r_obs) - 1e-12
    return (1.0 + exceed) / (1.0 + cfg.n_perm)


def partial_correlation(x: np.ndarray, y: np.ndarray, Z: np.ndarray | None = None,
                        cfg: CiConfig = CiConfig()) -> CiResult:
    """Partial correlation of x and y given Z, p-value by Fisher z (or permutation)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(x)
    Z = np.zeros((n, 0)) if Z is None else np.asarray(Z, dtype=np.float64).reshape(n, -1)
    if len(y) != n:
        raise ContractViolation("x and y lengths differ")
    _check_power(n, Z.shape[1], cfg)
    res, ridge = _residualize(Z, np.column_stack([x, y]))
    r = _corr_cols(res[:, :1], res[:, 1:])
    if cfg.test == "permutation":
        p = _perm_p(res[:, :1], res[:, 1:], r, cfg, "pair")
    else:
        p = _fisher_p(r, n, Z.shape[1])
    return CiResult(r[0, 0], p[0, 0], ridge)


def group_dependence(y: np.ndarray, B: np.ndarray, C: np.ndarray, cfg: CiConfig = CiConfig(),
                     tag: str = "") -> tuple[float, bool]:
    """p-value for y ⊥ B | C, with B a block of columns.

    Nested-OLS F-test of [1, C, B] against [1, C]; the permutation variant
    permutes y's residual after the reduced fit (Freedman-Lane).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n, k = B.shape
    _check_power(n, C.shape[1] + k, cfg)
    res, ridge1 = _residualize(C, np.column_stack([y, B]))
    ry, rB = res[:, 0], res[:, 1:]
    beta, _, rank, _ = np.linalg.lstsq(rB, ry, rcond=None)
    fitted = rB @ beta

    def stat(v):
        b = np.linalg.lstsq(rB, v, rcond=None)[0]
        return float(np.sum((rB @ b) ** 2))

    rss_r = float(ry @ ry)
    ess = float(fitted @ fitted)
    if cfg.test == "permutation":
        rng = substream(cfg.seed, "perm-group", tag)
        exceed = sum(stat(ry[rng.permutation(n)]) >= ess - 1e-12 for _ in range(cfg.n_perm))
        return (1.0 + exceed) / (1.0 + cfg.n_perm), ridge1
    dof = n - 1 - C.shape[1] - rank
    rss_f = max(rss_r - ess, 1e-300)
    if rank == 0:
        return 1.0, ridge1
    F = (ess / rank) / (rss_f / dof)
    return float(stats.f.sf(F, rank, dof)), ridge1


# ---- data layout -------------------------------------------------------------

@dataclass
class _Table:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    theta: np.ndarray | None
    p: int
    t: np.ndarray
    t_tilde: np.ndarray

    def rows(self, min_t: int) -> np.ndarray:
        return np.flatnonzero(self.t >= min_t)


def _stack(trajs: Sequence[Trajectory], need_theta: bool) -> _Table:
    if not trajs:
        raise UnderpoweredError(0, 50)
    for tr in trajs:
        if not np.array_equal(tr.t, np.arange(len(tr))):
            raise ContractViolation(f"episode {tr.episode} is not a contiguous run starting at t=0")
        if need_theta and (tr.theta_s is None or tr.theta_r is None):
            raise ContractViolation("full identification needs trajectories with recorded θ")
    theta = None
    p = 0
    if need_theta:
        p = trajs[0].theta_s.shape[1]
        theta = np.concatenate([np.column_stack([tr.theta_s, tr.theta_r]) for tr in trajs])
    return _Table(np.concatenate([tr.s for tr in trajs]), np.concatenate([tr.a for tr in trajs]),
                  np.concatenate([tr.r for tr in trajs]), np.concatenate([tr.s_next for tr in trajs]),
                  theta, p, np.concatenate([tr.t for tr in trajs]),
                  np.concatenate([tr.t_tilde for tr in trajs]).astype(np.float64))


def time_basis(t_tilde: np.ndarray, freqs: Sequence[float]) -> np.ndarray:
    """Standardized [t̃, sin(ω t̃), cos(ω t̃) for each ω] columns."""
    tt = np.asarray(t_tilde, dtype=np.float64)
    cols = [tt] + [f(w * tt) for w in freqs for f in (np.sin, np.cos)]
    B = np.column_stack(cols)
    sd = B.std(axis=0)
    keep = sd > 1e-12
    return (B[:, keep] - B[:, keep].mean(axis=0)) / sd[keep]


# ---- result -----------------------------------------------------------------

@dataclass
class IdentResult:
    mode: str
    recovered: FnMdpGraph
    change_affected: np.ndarray
    reward_nonstationary: bool
    pvalue_table: dict[str, float]
    unidentified: tuple[str, ...] = ()
    alpha: float = 0.01
    n_rows: int = 0
    ridge_fallbacks: int = 0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "graph": self.recovered.to_dict(),
            "change_affected": [bool(v) for v in self.change_affected],
            "reward_nonstationary": bool(self.reward_nonstationary),
            "unidentified": list(self.unidentified),
            "alpha": self.alpha,
            "n_rows": self.n_rows,
            "ridge_fallbacks": self.ridge_fallbacks,
            "pvalues": {k: self.pvalue_table[k] for k in sorted(self.pvalue_table)},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IdentResult":
        return cls(doc["mode"], FnMdpGraph.from_dict(doc["graph"]), np.array(doc["change_affected"], bool),
                   bool(doc["reward_nonstationary"]), dict(doc["pvalues"]), tuple(doc["unidentified"]),
                   float(doc["alpha"]), int(doc["n_rows"]), int(doc["ridge_fallbacks"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def shd_blocks(a: FnMdpGraph, b: FnMdpGraph, blocks: Sequence[str] = MASK_NAMES) -> int:
    """Structural Hamming distance restricted to the named mask blocks."""
    if a.dims[:2] != b.dims[:2]:
        raise ContractViolation("state/action dimensions differ")
    return int(sum(np.count_nonzero(getattr(a, k) != getattr(b, k)) for k in blocks))


# ---- the test batteries ------------------------------------------------------

class _Battery:
    def __init__(self, cfg: CiConfig):
        self.cfg = cfg
        self.table: dict[str, float] = {}
        self.ridge = 0

    def pairs(self, X, Y, Z, xnames, ynames, zdesc, tag):
        """p-values for every (x column, y column) pair given the shared Z."""
        n = X.shape[0]
        _check_power(n, Z.shape[1], self.cfg)
        res, ridge = _residualize(Z, np.column_stack([X, Y]))
        self.ridge += int(ridge)
        rx, ry = res[:, :X.shape[1]], res[:, X.shape[1]:]
        r = _corr_cols(rx, ry)
        if self.cfg.test == "permutation":
            p = _perm_p(rx, ry, r, self.cfg, tag)
        else:
            p = _fisher_p(r, n, Z.shape[1])
        for i, xn in enumerate(xnames):
            for j, yn in enumerate(ynames):
                self.table[f"{xn} _||_ {yn} | {zdesc}"] = float(p[i, j])
        return p

    def group(self, y, B, C, yname, bdesc, cdesc, tag):
        p, ridge = group_dependence(y, B, C, self.cfg, tag)
        self.ridge += int(ridge)
        self.table[f"{yname} _||_ {bdesc} | {cdesc}"] = p
        return p

    def edge(self, p) -> np.ndarray:
        # ties at p == alpha count as independent
        return (np.asarray(p) < self.cfg.alpha).astype(np.uint8)


def _names(prefix: str, k: int, when: str) -> list[str]:
    return [f"{prefix}_{i}[{when}]" for i in range(k)]


def _mdp_edges(bat: _Battery, tab: _Table, rows: np.ndarray, Z: np.ndarray, zdesc: str):
    d, m = tab.s.shape[1], tab.a.shape[1]
    X = np.column_stack([tab.s[rows], tab.a[rows]])
    Y = np.column_stack([tab.s_next[rows], tab.r[rows]])
    p = bat.pairs(X, Y, Z, _names("s", d, "t") + _names("a", m, "t"), _names("s", d, "t+1") + ["r[t]"],
                  zdesc, "mdp")
    e = bat.edge(p)  # (d+m, d+1): rows parents, columns children
    return e[:d, :d].T, e[d:, :d].T, e[:d, d], e[d:, d]


def identify_full(trajs: Sequence[Trajectory], cfg: CiConfig = CiConfig()) -> IdentResult:
    tab = _stack(trajs, need_theta=True)
    d, m = tab.s.shape[1], tab.a.shape[1]
    p = tab.p
    q = tab.theta.shape[1] - p
    bat = _Battery(cfg)

    rows1 = tab.rows(1)
    Z = np.column_stack([tab.theta[rows1], tab.theta[rows1 - 1], tab.s[rows1 - 1], tab.a[rows1 - 1]])
    Css, Cas, csr, car = _mdp_edges(bat, tab, rows1, Z, "theta[t], theta[t-1], s[t-1], a[t-1]")

    Ctt = np.zeros((p + q, p + q), np.uint8)
    if p + q:
        rows2 = tab.rows(2)
        th_names = _names("ths", p, "t-1") + _names("thr", q, "t-1")
        pv = bat.pairs(tab.theta[rows2 - 1], tab.theta[rows2], tab.theta[rows2 - 2], th_names,
                       _names("ths", p, "t") + _names("thr", q, "t"), "theta[t-2]", "theta")
        Ctt = bat.edge(pv).T  # row = child
    Ctt_s, Ctt_r = Ctt[:p, :p], Ctt[p:, p:]

    Cts = np.zeros((d, p), np.uint8)
    if p:
        Zs = np.column_stack([tab.s[rows1], tab.a[rows1], tab.theta[rows1 - 1]])
        pv = bat.pairs(tab.theta[rows1, :p], tab.s_next[rows1], Zs, _names("ths", p, "t"),
                       _names("s", d, "t+1"), "s[t], a[t], theta[t-1]", "cts")
        Cts = bat.edge(pv).T

    reward_ns = False
    if q:
        rows0 = tab.rows(0)
        reward_ns = bat.group(tab.r[rows0], tab.theta[rows0, p:], np.column_stack([tab.s[rows0], tab.a[rows0]]),
                              "r[t]", "thr[t]", "s[t], a[t]", "r") < cfg.alpha

    g = FnMdpGraph(d, m, p, q, Css=Css, Cas=Cas, Cts=Cts, csr=csr, car=car, Ctt_s=Ctt_s, Ctt_r=Ctt_r)
    return IdentResult("full", g, Cts.any(axis=1), bool(reward_ns), bat.table, (), cfg.alpha, len(rows1),
                       bat.ridge)


def identify_partial(trajs: Sequence[Trajectory], cfg: CiConfig = CiConfig(), p: int = 0, q: int = 0) -> IdentResult:
    """Recover Css, Cas, csr, car and the change flags with θ hidden.

    ``p`` and ``q`` only size the returned graph; its Cts and Ctt blocks are
    zero and listed in ``unidentified``.
    """
    tab = _stack(trajs, need_theta=False)
    d, m = tab.s.shape[1], tab.a.shape[1]
    bat = _Battery(cfg)
    basis = time_basis(tab.t_tilde, cfg.basis_freqs)

    rows1 = tab.rows(1)
    Z = np.column_stack([basis[rows1], tab.s[rows1 - 1], tab.a[rows1 - 1]])
    Css, Cas, csr, car = _mdp_edges(bat, tab, rows1, Z, "basis(t~[t]), s[t-1], a[t-1]")

    rows0 = tab.rows(0)
    C = np.column_stack([tab.s[rows0], tab.a[rows0]])
    B = basis[rows0]
    affected = np.array([bat.group(tab.s_next[rows0, i], B, C, f"s_{i}[t+1]", "basis(t~[t])", "s[t], a[t]",
                                   f"s{i}") < cfg.alpha for i in range(d)])
    reward_ns = bat.group(tab.r[rows0], B, C, "r[t]", "basis(t~[t])", "s[t], a[t]", "r") < cfg.alpha

    g = FnMdpGraph(d, m, p, q, Css=Css, Cas=Cas, Cts=np.zeros((d, p)), csr=csr, car=car,
                   Ctt_s=np.zeros((p, p)), Ctt_r=np.zeros((q, q)))
    return IdentResult("partial", g, affected, bool(reward_ns), bat.table, ("Cts", "Ctt_s", "Ctt_r"),
                       cfg.alpha, len(rows1), bat.ridge)
