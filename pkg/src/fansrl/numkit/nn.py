"""Parameter containers and layers: dense MLPs, per-output masked MLPs, LSTMs."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .. import kernels
from ..errors import ContractViolation
from . import tensor as T
from .tensor import Tensor, as_tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


class Module:
    """Holds named parameter tensors and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_child(self, name: str, mod: "Module") -> "Module":
        self._children[name] = mod
        return mod

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_params(f"{prefix}{cname}."))
        return out

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.params())

    def param(self, name: str) -> Tensor:
        return self._params[name]

    def set_param(self, name: str, value: np.ndarray) -> None:
        """Replace a parameter's value (shape must match)."""
        if "." in name:
            head, rest = name.split(".", 1)
            self._children[head].set_param(rest, value)
            return
        old = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != old.shape:
            raise ContractViolation(f"{name}: shape {value.shape} != {old.shape}")
        old.data = value.copy()

    def zero_(self) -> "Module":
        for p in self.params():
            p.data = np.zeros_like(p.data)
        return self


_ACTS = {"tanh": T.tanh, "relu": T.relu, "identity": lambda x: x}


class Mlp(Module):
    """Dense feed-forward net; activation between layers, linear output."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, activation: str = "tanh",
                 init: str = "xavier", init_scale: float = 0.1):
        super().__init__()
        if len(sizes) < 2:
            raise ContractViolation("Mlp needs at least input and output sizes")
        self.sizes = list(sizes)
        self.activation = activation
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            if init == "xavier":
                w = xavier_uniform(rng, a, b)
            elif init == "normal":
                w = rng.standard_normal((a, b)) * init_scale
            else:
                raise ContractViolation(f"unknown init {init!r}")
            self.add_param(f"W{i}", w)
            self.add_param(f"b{i}", np.zeros(b))
        self.n_layers = len(sizes) - 1

    def __call__(self, x) -> Tensor:
        act = _ACTS[self.activation]
        h = as_tensor(x)
        for i in range(self.n_layers):
            h = h @ self._params[f"W{i}"] + self._params[f"b{i}"]
            if i < self.n_layers - 1:
                h = act(h)
        return h

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        """Tape-free evaluation for acting and targets."""
        h = np.asarray(x, dtype=np.float64)
        for i in range(self.n_layers):
            h = h @ self._params[f"W{i}"].data + self._params[f"b{i}"].data
            if i < self.n_layers - 1:
                h = np.tanh(h) if self.activation == "tanh" else np.maximum(h, 0.0)
        return h


class MaskedMlp(Module):
    """One small net per output coordinate, each seeing a masked copy of the input.

    Output ``j`` is computed from ``mask[j] * x``; a zero in ``mask[j, k]``
    removes input ``k`` from that net entirely. Each net emits ``n_head``
    values (mean and raw log-variance for Gaussian heads). ``hidden=0`` gives
    a linear map per output.
    """

    def __init__(self, n_out: int, n_in: int, hidden: int, rng: np.random.Generator, n_head: int = 2):
        super().__init__()
        self.n_out, self.n_in, self.hidden, self.n_head = n_out, n_in, hidden, n_head
        if hidden > 0:
            self.add_param("W1", xavier_uniform(rng, n_in, hidden, (n_out, n_in, hidden)))
            self.add_param("b1", np.zeros((n_out, 1, hidden)))
            self.add_param("W2", xavier_uniform(rng, hidden, n_head, (n_out, hidden, n_head)))
            self.add_param("b2", np.zeros((n_out, 1, n_head)))
        else:
            self.add_param("W", xavier_uniform(rng, n_in, n_head, (n_out, n_in, n_head)))
            self.add_param("b", np.zeros((n_out, 1, n_head)))

    def __call__(self, x, mask=None) -> Tensor:
        """x: (N, n_in); mask: (n_out, n_in) or None. Returns (N, n_out, n_head)."""
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ContractViolation(f"MaskedMlp expects (N, {self.n_in}), got {x.shape}")
        n = x.shape[0]
        xin = T.reshape(x, (1, n, self.n_in))
        if mask is not None:
            mask = as_tensor(mask)
            if mask.shape != (self.n_out, self.n_in):
                raise ContractViolation(f"mask shape {mask.shape} != {(self.n_out, self.n_in)}")
            xin = xin * T.reshape(mask, (self.n_out, 1, self.n_in))
        if self.hidden > 0:
            h = T.tanh(xin @ self._params["W1"] + self._params["b1"])
            out = h @ self._params["W2"] + self._params["b2"]
        else:
            out = xin @ self._params["W"] + self._params["b"]
        # (n_out, N, k) -> (N, n_out, k)
        return T.transpose(out, (1, 0, 2))

    def forward_numpy(self, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        xin = x[None, :, :]
        if mask is not None:
            xin = xin * np.asarray(mask)[:, None, :]
        p = self._params
        if self.hidden > 0:
            out = np.tanh(xin @ p["W1"].data + p["b1"].data) @ p["W2"].data + p["b2"].data
        else:
            out = xin @ p["W"].data + p["b"].data
        return np.transpose(out, (1, 0, 2))


class Lstm(Module):
    """LSTM weights (gate order i, f, g, o) with forget-gate bias +1."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        self.add_param("Wx", xavier_uniform(rng, n_in, 4 * hidden))
        self.add_param("Wh", xavier_uniform(rng, hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.add_param("b", b)

    @property
    def weights(self) -> tuple[Tensor, Tensor, Tensor]:
        p = self._params
        return p["Wx"], p["Wh"], p["b"]


def lstm_step(x, h, c, weights) -> tuple[Tensor, Tensor]:
    """One LSTM cell update built from primitive ops. weights = (Wx, Wh, b)."""
    wx, wh, b = (as_tensor(w) for w in weights)
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    H = wh.shape[0]
    if wx.shape != (x.shape[-1], 4 * H) or wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ContractViolation("LSTM weight shapes inconsistent with input/hidden sizes")
    if h.shape[-1] != H or c.shape[-1] != H:
        raise ContractViolation(f"hidden/cell size must be {H}")
    z = x @ wx + h @ wh + b
    i = T.sigmoid(z[..., :H])
    f = T.sigmoid(z[..., H:2 * H])
    g = T.tanh(z[..., 2 * H:3 * H])
    o = T.sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    return o * T.tanh(c_new), c_new


def lstm_sequence(x, weights, keep: np.ndarray | None = None, h0=None, c0=None) -> Tensor:
    """Run an LSTM over x of shape (B, T, I) as one fused tape node.

    ``keep[b, t]`` multiplies the carried (h, c) before step t; 0 resets the
    state (episode boundary). Returns hidden states (B, T, H).
    """
    wx, wh, b = (as_tensor(w) for w in weights)
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] != wx.shape[0]:
        raise ContractViolation(f"lstm_sequence expects (B, T, {wx.shape[0]}), got {x.shape}")
    B, Tn, _ = x.shape
    H = wh.shape[0]
    h0 = as_tensor(np.zeros((B, H)) if h0 is None else h0)
    c0 = as_tensor(np.zeros((B, H)) if c0 is None else c0)
    keep = np.ones((B, Tn)) if keep is None else np.ascontiguousarray(keep, dtype=np.float64)
    xw = x @ wx + b
    hs, cache = kernels.lstm_forward(np.ascontiguousarray(xw.data), np.ascontiguousarray(wh.data),
                                     np.ascontiguousarray(h0.data), np.ascontiguousarray(c0.data), keep)
    whd = np.ascontiguousarray(wh.data)

    def back(g):
        dxw, dwh, dh0, dc0 = kernels.lstm_backward(np.ascontiguousarray(g), whd, *cache, keep)
        return dxw, dwh, dh0, dc0

    return T.custom(hs, (xw, wh, h0, c0), back)
