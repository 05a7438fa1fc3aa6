"""Causal graph of a factored non-stationary MDP, its time unrolling, and d-separation.

Mask orientation is row = child, column = parent throughout:

* ``Css[i, j] = 1``   means s_j(t-1) -> s_i(t)
* ``Cas[i, j] = 1``   means a_j(t-1) -> s_i(t)
* ``Cts[i, k] = 1``   means θˢ_k(t) -> s_i(t)            (same slice)
* ``csr[j] = 1``      means s_j(t-1) -> r(t)
* ``car[j] = 1``      means a_j(t-1) -> r(t)
* ``Ctt_s[k, k'] = 1`` means θˢ_k'(t-1) -> θˢ_k(t)
* ``Ctt_r[l, l'] = 1`` means θʳ_l'(t-1) -> θʳ_l(t)

Every θʳ_l(t) -> r(t) edge is always present and has no mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import kernels
from .errors import ContractViolation
from .rng import substream

MASK_NAMES = ("Css", "Cas", "Cts", "csr", "car", "Ctt_s", "Ctt_r")
KINDS = ("s", "a", "r", "theta_s", "theta_r")


def _mask_shapes(d: int, m: int, p: int, q: int) -> dict[str, tuple[int, ...]]:
    return {"Css": (d, d), "Cas": (d, m), "Cts": (d, p), "csr": (d,), "car": (m,),
            "Ctt_s": (p, p), "Ctt_r": (q, q)}


@dataclass(frozen=True, eq=False)
class FnMdpGraph:
    d: int
    m: int
    p: int
    q: int
    Css: np.ndarray
    Cas: np.ndarray
    Cts: np.ndarray
    csr: np.ndarray
    car: np.ndarray
    Ctt_s: np.ndarray
    Ctt_r: np.ndarray

    def __post_init__(self):
        for dim in ("d", "m", "p", "q"):
            v = getattr(self, dim)
            if int(v) != v or v < 0:
                raise ContractViolation(f"{dim} must be a nonnegative integer, got {v!r}")
        if self.d < 1:
            raise ContractViolation("graph needs at least one state dimension")
        shapes = _mask_shapes(self.d, self.m, self.p, self.q)
        for name in MASK_NAMES:
            raw = np.asarray(getattr(self, name))
            if raw.shape != shapes[name]:
                raise ContractViolation(f"{name} has shape {raw.shape}, expected {shapes[name]}")
            if raw.size and not np.isin(raw, (0, 1)).all():
                raise ContractViolation(f"{name} entries must be 0 or 1")
            arr = raw.astype(np.uint8)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, d: int, m: int, p: int, q: int) -> "FnMdpGraph":
        shapes = _mask_shapes(d, m, p, q)
        return cls(d, m, p, q, **{k: np.zeros(v, np.uint8) for k, v in shapes.items()})

    @classmethod
    def full(cls, d: int, m: int, p: int, q: int) -> "FnMdpGraph":
        shapes = _mask_shapes(d, m, p, q)
        return cls(d, m, p, q, **{k: np.ones(v, np.uint8) for k, v in shapes.items()})

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.d, self.m, self.p, self.q

    def masks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in MASK_NAMES}

    def replace(self, **masks) -> "FnMdpGraph":
        unknown = set(masks) - set(MASK_NAMES)
        if unknown:
            raise ContractViolation(f"unknown mask(s): {sorted(unknown)}")
        return FnMdpGraph(*self.dims, **{**self.masks(), **masks})

    def __eq__(self, other) -> bool:
        if not isinstance(other, FnMdpGraph):
            return NotImplemented
        return self.dims == other.dims and all(
            np.array_equal(a, b) for a, b in zip(self.masks().values(), other.masks().values()))

    def __hash__(self):
        return hash((self.dims, tuple(m.tobytes() for m in self.masks().values())))

    def __repr__(self) -> str:
        edges = sum(int(v.sum()) for v in self.masks().values())
        return f"FnMdpGraph(d={self.d}, m={self.m}, p={self.p}, q={self.q}, edges={edges})"

    # ---- JSON ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {"dims": {"d": self.d, "m": self.m, "p": self.p, "q": self.q},
                "masks": {name: arr.tolist() for name, arr in self.masks().items()}}

    @classmethod
    def from_dict(cls, doc: dict) -> "FnMdpGraph":
        try:
            dims = doc["dims"]
            masks = doc["masks"]
            d, m, p, q = (int(dims[k]) for k in ("d", "m", "p", "q"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractViolation(f"malformed graph document: {exc}") from exc
        missing = set(MASK_NAMES) - set(masks)
        extra = set(masks) - set(MASK_NAMES)
        if missing or extra:
            raise ContractViolation(f"graph masks mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        shapes = _mask_shapes(d, m, p, q)
        # np.array on [] gives shape (0,), so reshape empty masks explicitly
        arrs = {k: np.array(masks[k], dtype=np.int64).reshape(shapes[k]) if np.size(masks[k]) == 0
                else np.array(masks[k], dtype=np.int64) for k in MASK_NAMES}
        return cls(d, m, p, q, **arrs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FnMdpGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---- generic DAG -----------------------------------------------------------

def _csr(n: int, heads: np.ndarray, tails: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency lists grouping ``tails`` by ``heads``."""
    order = np.argsort(heads, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, heads + 1, 1)
    return np.cumsum(ptr), tails[order].astype(np.int64)


class Dag:
    """Immutable directed acyclic graph over nodes 0..n-1 with CSR adjacency."""

    def __init__(self, n: int, edges: Iterable[tuple[int, int]] | np.ndarray, names: list[str] | None = None):
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ContractViolation("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ContractViolation("self-loop in DAG")
        self.n = int(n)
        self.edges = e
        self.edges.setflags(write=False)
        self.names = list(names) if names is not None else [str(i) for i in range(n)]
        self.pa_ptr, self.pa_idx = _csr(self.n, e[:, 1], e[:, 0])
        self.ch_ptr, self.ch_idx = _csr(self.n, e[:, 0], e[:, 1])
        self.order = self._toposort()

    def _toposort(self) -> np.ndarray:
        indeg = np.diff(self.pa_ptr).copy()
        ready = list(np.flatnonzero(indeg == 0)[::-1])
        out = []
        while ready:
            v = ready.pop()
            out.append(v)
            for c in self.children(v):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(out) != self.n:
            raise ContractViolation("graph has a directed cycle")
        return np.asarray(out, dtype=np.int64)

    def parents(self, v: int) -> np.ndarray:
        return self.pa_idx[self.pa_ptr[v]:self.pa_ptr[v + 1]]

    def children(self, v: int) -> np.ndarray:
        return self.ch_idx[self.ch_ptr[v]:self.ch_ptr[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        return bool(np.any(self.children(u) == v))

    def ancestors(self, nodes: Iterable[int]) -> np.ndarray:
        """Boolean mask of ``nodes`` and all their ancestors."""
        return self._closure(nodes, self.parents)

    def descendants(self, nodes: Iterable[int]) -> np.ndarray:
        """Boolean mask of ``nodes`` and all their descendants."""
        return self._closure(nodes, self.children)

    def _closure(self, nodes, step) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        stack = [int(v) for v in nodes]
        while stack:
            v = stack.pop()
            if seen[v]:
                continue
            seen[v] = True
            stack.extend(int(u) for u in step(v) if not seen[u])
        return seen

    def __len__(self) -> int:
        return self.n


def _membership(n: int, nodes: Iterable[int], what: str) -> tuple[np.ndarray, set[int]]:
    s = {int(v) for v in nodes}
    if any(v < 0 or v >= n for v in s):
        raise ContractViolation(f"{what} contains a node outside 0..{n - 1}")
    mask = np.zeros(n, dtype=np.uint8)
    mask[list(s)] = 1
    return mask, s


def d_separated(dag: Dag, X: Iterable[int], Y: Iterable[int], Z: Iterable[int] = ()) -> bool:
    """True iff every trail between X and Y is blocked by Z.

    A non-collider on the trail blocks it when it is in Z; a collider blocks it
    unless the collider or one of its descendants is in Z.
    """
    xm, xs = _membership(dag.n, X, "X")
    ym, ys = _membership(dag.n, Y, "Y")
    zm, zs = _membership(dag.n, Z, "Z")
    if xs & ys or xs & zs or ys & zs:
        raise ContractViolation("X, Y and Z must be pairwise disjoint")
    if not xs or not ys:
        return True
    reach = kernels.dsep_reachable(dag.n, dag.pa_ptr, dag.pa_idx, dag.ch_ptr, dag.ch_idx, xm, zm)
    return not bool(np.any(np.asarray(reach)[ym.astype(bool)]))


# ---- unrolled DBN ----------------------------------------------------------

class UnrolledDbn(Dag):
    """The FN-MDP graph replicated over T slices.

    Within slice t the nodes are laid out as s_0..s_{d-1}, a_0..a_{m-1}, r,
    θˢ_0..θˢ_{p-1}, θʳ_0..θʳ_{q-1}; node id = t * slice_size + offset.
    """

    def __init__(self, g: FnMdpGraph, T: int):
        if int(T) != T or T < 2:
            raise ContractViolation(f"unroll horizon must be an integer >= 2, got {T!r}")
        self.graph = g
        self.T = int(T)
        d, m, p, q = g.dims
        self.slice_size = d + m + 1 + p + q
        self._offset = {"s": 0, "a": d, "r": d + m, "theta_s": d + m + 1, "theta_r": d + m + 1 + p}
        self._width = {"s": d, "a": m, "r": 1, "theta_s": p, "theta_r": q}
        names = [f"{kind}{'' if kind == 'r' else '_' + str(i)}@{t}"
                 for t in range(self.T) for kind in KINDS for i in range(self._width[kind])]
        super().__init__(self.T * self.slice_size, self._build_edges(), names)

    def node(self, kind: str, index: int, t: int) -> int:
        if kind not in self._offset:
            raise ContractViolation(f"unknown node kind {kind!r}")
        if not (0 <= index < self._width[kind]) or not (0 <= t < self.T):
            raise ContractViolation(f"node ({kind}, {index}, {t}) out of range")
        return t * self.slice_size + self._offset[kind] + index

    def nodes(self, kind: str, t: int) -> list[int]:
        return [self.node(kind, i, t) for i in range(self._width[kind])]

    def locate(self, node: int) -> tuple[str, int, int]:
        t, off = divmod(int(node), self.slice_size)
        for kind in reversed(KINDS):
            if off >= self._offset[kind]:
                return kind, off - self._offset[kind], t
        raise AssertionError("unreachable")

    def _block(self, mask, child_kind, parent_kind, lag):
        """Edges for one mask block; mask rows index children."""
        mask = mask if mask.ndim == 2 else mask[None, :]
        ci, pi = np.nonzero(mask)
        t = np.arange(lag, self.T)
        tc = t[:, None] * self.slice_size
        parents = (tc - lag * self.slice_size + self._offset[parent_kind] + pi[None, :]).ravel()
        children = (tc + self._offset[child_kind] + ci[None, :]).ravel()
        return np.stack([parents, children], axis=1)

    def _build_edges(self) -> np.ndarray:
        g = self.graph
        blocks = [
            self._block(g.Css, "s", "s", 1),
            self._block(g.Cas, "s", "a", 1),
            self._block(g.Cts, "s", "theta_s", 0),
            self._block(g.csr, "r", "s", 1),
            self._block(g.car, "r", "a", 1),
            self._block(g.Ctt_s, "theta_s", "theta_s", 1),
            self._block(g.Ctt_r, "theta_r", "theta_r", 1),
            self._block(np.ones(g.q, np.uint8), "r", "theta_r", 0),
        ]
        return np.concatenate(blocks, axis=0).astype(np.int64)


def unroll(g: FnMdpGraph, T: int) -> UnrolledDbn:
    return UnrolledDbn(g, T)


# ---- compact representation -----------------------------------------------

@dataclass(frozen=True)
class CompactRepresentation:
    """Dimensions with a directed path to a present or future reward.

    ``theta_min`` indexes the concatenation (θˢ, θʳ); unpacking yields
    ``(s_min, theta_min)``.
    """

    s_min: tuple[int, ...]
    theta_s_min: tuple[int, ...]
    theta_r_min: tuple[int, ...]
    p: int

    @property
    def theta_min(self) -> tuple[int, ...]:
        return self.theta_s_min + tuple(self.p + l for l in self.theta_r_min)

    @property
    def policy_input_dim(self) -> int:
        return len(self.s_min) + len(self.theta_s_min) + len(self.theta_r_min)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return iter((self.s_min, self.theta_min))


def _backward_closure(seed: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # mask[i, j] = 1 means j -> i; grow the set of j with a path into ``seed``
    reach = seed.copy()
    while True:
        grown = reach | mask[reach].any(axis=0)
        if np.array_equal(grown, reach):
            return reach
        reach = grown


def compact_representation(g: FnMdpGraph) -> CompactRepresentation:
    """Reverse reachability from the reward on the infinitely unrolled graph.

    Every edge of the template points forward in time or stays within a
    slice, so a directed path between node kinds in the one-slice summary
    graph always lifts to a path in the unrolling. The fixed point over the
    summary graph is therefore exact; the finite-horizon oracle only needs
    d + p + 2 slices because such a path visits each state and θˢ kind once.
    """
    s = _backward_closure(g.csr.astype(bool), g.Css.astype(bool))
    ts = g.Cts.astype(bool)[s].any(axis=0) if g.p else np.zeros(0, bool)
    if g.p:
        ts = _backward_closure(ts, g.Ctt_s.astype(bool))
    return CompactRepresentation(tuple(int(i) for i in np.flatnonzero(s)),
                                 tuple(int(k) for k in np.flatnonzero(ts)),
                                 tuple(range(g.q)), g.p)


# ---- comparison and sampling -------------------------------------------------

def shd(a: FnMdpGraph, b: FnMdpGraph) -> int:
    """Structural Hamming distance: number of differing mask entries."""
    if a.dims != b.dims:
        raise ContractViolation(f"dimension mismatch: {a.dims} vs {b.dims}")
    return int(sum(np.count_nonzero(x != y) for x, y in zip(a.masks().values(), b.masks().values())))


def random_fnmdp_graph(seed: int, d: int, m: int, p: int, q: int, density: float) -> FnMdpGraph:
    """Each optional edge present independently with probability ``density``.

    Repairs: if no state feeds the reward one random s->r edge is added, and a
    state dimension with no incoming edge gets a self-loop.
    """
    if not (0.0 < density <= 1.0):
        raise ContractViolation(f"density must be in (0, 1], got {density}")
    rng = substream(seed, "graph")
    shapes = _mask_shapes(d, m, p, q)
    masks = {name: (rng.random(shapes[name]) < density).astype(np.uint8) for name in MASK_NAMES}
    if not masks["csr"].any():
        masks["csr"][rng.integers(d)] = 1
    incoming = masks["Css"].any(axis=1) | masks["Cas"].any(axis=1) | masks["Cts"].any(axis=1)
    for i in np.flatnonzero(~incoming):
        masks["Css"][i, i] = 1
    return FnMdpGraph(d, m, p, q, **masks)
