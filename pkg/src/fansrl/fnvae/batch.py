"""Lifetime-ordered step streams and the fixed-length windows FN-VAE trains on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation


@dataclass
class Stream:
    """Steps of consecutive episodes flattened in lifetime order."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    t_tilde: np.ndarray
    episode: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.r)

    @classmethod
    def from_trajectories(cls, trajs) -> "Stream":
        trajs = sorted(trajs, key=lambda tr: int(tr.t_tilde[0]))
        if not trajs:
            raise ContractViolation("no trajectories")
        cat = lambda k: np.concatenate([np.asarray(getattr(tr, k)) for tr in trajs])  # noqa: E731
        ep = np.concatenate([np.full(len(tr), tr.episode) for tr in trajs])
        return cls(cat("s"), cat("a"), cat("r").astype(np.float64), cat("s_next"),
                   cat("t_tilde").astype(np.int64), ep.astype(np.int64), cat("t").astype(np.int64))


@dataclass
class SeqBatch:
    """B windows of T consecutive steps.

    keep[b, t]        1 if the LSTM state carries into step t
    link[b, t]        1 if step t directly follows step t-1 in lifetime
    pred_valid[b, t]  1 if step t+1 may be predicted from step t
    seg[b, t]         local change-segment id (discrete mode only)
    seg_last[b, j]    position of the last step of segment j in the window
    seg_valid[b, j]   1 if segment j exists in window b
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    t_tilde: np.ndarray
    episode: np.ndarray
    t: np.ndarray
    keep: np.ndarray
    link: np.ndarray
    pred_valid: np.ndarray
    seg: np.ndarray | None = None
    seg_last: np.ndarray | None = None
    seg_valid: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.r.shape

    @property
    def discrete(self) -> bool:
        return self.seg is not None


def check_changepoints(changepoints) -> np.ndarray:
    cps = np.asarray(changepoints, dtype=np.int64).ravel()
    if cps.size and (np.any(np.diff(cps) <= 0) or cps[0] < 0):
        raise ContractViolation("change points must be sorted, distinct and nonnegative")
    return cps


def make_batch(stream: Stream, starts, length: int, changepoints=None) -> SeqBatch:
    """Cut windows ``stream[start:start+length]``.

    ``changepoints`` (sorted lifetime indices where θ jumps) selects the
    discrete layout: the LSTM restarts at every segment start and the
    prediction terms are dropped for the step before each change.
    Without it θ is treated as continuous and the LSTM state carries across
    episode boundaries.
    """
    starts = np.asarray(starts, dtype=np.int64).ravel()
    if length < 1 or np.any(starts < 0) or np.any(starts + length > len(stream)):
        raise ContractViolation(f"windows of length {length} at {starts.tolist()} exceed stream of {len(stream)}")
    idx = starts[:, None] + np.arange(length)[None, :]
    get = lambda x: x[idx]  # noqa: E731
    tt, ep = get(stream.t_tilde), get(stream.episode)
    B, T = idx.shape
    link = np.zeros((B, T))
    link[:, 1:] = (tt[:, 1:] == tt[:, :-1] + 1)
    same_ep = np.zeros((B, T), dtype=bool)
    same_ep[:, 1:] = ep[:, 1:] == ep[:, :-1]
    kw = {}
    if changepoints is None:
        keep = link.copy()
        nxt_ok = (link[:, 1:] > 0) & same_ep[:, 1:]
    else:
        cps = check_changepoints(changepoints)
        gseg = np.searchsorted(cps, tt, side="right")
        new = np.ones((B, T), dtype=bool)
        new[:, 1:] = (gseg[:, 1:] != gseg[:, :-1]) | (link[:, 1:] == 0)
        seg = np.cumsum(new, axis=1) - 1
        M = int(seg.max()) + 1
        seg_last = np.full((B, M), T - 1, dtype=np.int64)
        seg_valid = np.zeros((B, M))
        for b in range(B):
            last = np.flatnonzero(np.append(new[b, 1:], True))
            seg_last[b, :len(last)] = last
            seg_valid[b, :len(last)] = 1.0
        keep = (~new).astype(np.float64)
        nxt_ok = (~new[:, 1:]) & same_ep[:, 1:]
        kw = {"seg": seg, "seg_last": seg_last, "seg_valid": seg_valid}
    pred = np.zeros((B, T))
    pred[:, :-1] = nxt_ok
    return SeqBatch(get(stream.s), get(stream.a), get(stream.r), get(stream.s_next), tt, ep, get(stream.t),
                    keep, link, pred, **kw)


def window_starts(stream: Stream, length: int, n: int, rng: np.random.Generator, changepoints=None) -> np.ndarray:
    """Uniform window starts; in discrete mode windows start at a segment start."""
    hi = len(stream) - length
    if hi < 0:
        raise ContractViolation(f"stream of {len(stream)} steps is shorter than window {length}")
    if changepoints is None:
        return rng.integers(0, hi + 1, size=n)
    cps = check_changepoints(changepoints)
    tt = stream.t_tilde
    begins = np.flatnonzero(np.isin(tt, cps) | np.append(True, tt[1:] != tt[:-1] + 1))
    begins = begins[begins <= hi]
    if begins.size == 0:
        begins = np.array([0])
    return rng.choice(begins, size=n, replace=True)


def trajectory_batch(traj, changepoints=None) -> SeqBatch:
    """One window holding a whole trajectory."""
    st = Stream.from_trajectories([traj])
    return make_batch(st, [0], len(st), changepoints)
