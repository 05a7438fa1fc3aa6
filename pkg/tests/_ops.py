"""Catalogue of differentiable numkit ops with random-instance generators.

Each entry maps a name to (make_inputs(rng) -> list[ndarray], build(list[Tensor]) -> scalar).
Inputs stay away from kinks (relu/abs/clip/minimum) so central differences are valid.
"""

from __future__ import annotations

import numpy as np

from fansrl import numkit as nk
from fansrl.numkit import GaussianHead


def _away(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, x + np.sign(x + 1e-12) * 2 * margin, x)


def _clip_inputs(rng):
    x = rng.normal(size=(3, 4))
    near = np.abs(np.abs(x) - 0.5) < 0.05
    return np.where(near, x * 1.3, x)


def _w(rng, shape):
    # fixed random weighting so sum-reductions don't hide errors
    return rng.normal(size=shape)


def _lstm_seq_inputs(rng):
    B, Tn, I, H = 2, 4, 3, 3
    keep = np.ones((B, Tn))
    keep[1, 2] = 0.0
    return [rng.normal(size=(B, Tn, I)), rng.normal(size=(I, 4 * H)) * 0.5,
            rng.normal(size=(H, 4 * H)) * 0.5, rng.normal(size=4 * H) * 0.5,
            rng.normal(size=(B, H)) * 0.5, rng.normal(size=(B, H)) * 0.5], keep


def catalogue(rng):
    """Fresh (inputs, build) pairs for one random instance of every op."""
    ops = {}

    def unary(name, fn, gen=None):
        x = gen(rng) if gen else rng.normal(size=(3, 4))
        w = _w(rng, x.shape)
        ops[name] = ([x], lambda p, fn=fn, w=w: (fn(p[0]) * w).sum())

    def binary(name, fn, ga=None, gb=None):
        a = ga(rng) if ga else rng.normal(size=(3, 4))
        b = gb(rng) if gb else rng.normal(size=(3, 4))
        w = _w(rng, np.broadcast_shapes(a.shape, b.shape))
        ops[name] = ([a, b], lambda p, fn=fn, w=w: (fn(p[0], p[1]) * w).sum())

    binary("add", nk.add, gb=lambda r: r.normal(size=(1, 4)))
    binary("sub", nk.sub, gb=lambda r: r.normal(size=(4,)))
    binary("mul", nk.mul, gb=lambda r: r.normal(size=(3, 1)))
    binary("div", nk.div, gb=lambda r: r.uniform(0.5, 2.0, size=(3, 4)) * r.choice([-1, 1], size=(3, 4)))
    a = rng.normal(size=(3, 4))
    binary("minimum", nk.minimum, ga=lambda r: a, gb=lambda r: a + _away(r, (3, 4), 0.1))
    cond = rng.random((3, 4)) > 0.5
    binary("where", lambda x, y: nk.where(cond, x, y))
    unary("neg", nk.neg)
    unary("power", lambda x: nk.power(x, 3.0))
    unary("power_frac", lambda x: nk.power(x, 1.5), gen=lambda r: r.uniform(0.5, 2.0, size=(3, 4)))
    unary("square", nk.square)
    unary("sqrt", nk.sqrt, gen=lambda r: r.uniform(0.5, 3.0, size=(3, 4)))
    unary("exp", nk.exp)
    unary("expm1", nk.expm1)
    unary("log", nk.log, gen=lambda r: r.uniform(0.5, 3.0, size=(3, 4)))
    unary("tanh", nk.tanh)
    unary("sigmoid", nk.sigmoid)
    unary("relu", nk.relu, gen=lambda r: _away(r, (3, 4)))
    unary("softplus", nk.softplus)
    unary("abs", nk.tabs, gen=lambda r: _away(r, (3, 4)))
    unary("clip", lambda x: nk.clip(x, -0.5, 0.5), gen=_clip_inputs)
    unary("sum_axis", lambda x: nk.tsum(x, axis=1, keepdims=True))
    ops["sum_axis0"] = ([rng.normal(size=(3, 4))], lambda p, w=_w(rng, (4,)): (nk.tsum(p[0], axis=0) * w).sum())
    ops["mean"] = ([rng.normal(size=(3, 4))], lambda p, w=_w(rng, (3,)): (nk.tmean(p[0], axis=1) * w).sum())
    ops["reshape"] = ([rng.normal(size=(3, 4))], lambda p, w=_w(rng, (2, 6)): (nk.reshape(p[0], (2, 6)) * w).sum())
    ops["transpose"] = ([rng.normal(size=(2, 3, 4))],
                        lambda p, w=_w(rng, (4, 2, 3)): (nk.transpose(p[0], (2, 0, 1)) * w).sum())
    ops["swapaxes"] = ([rng.normal(size=(2, 3, 4))],
                       lambda p, w=_w(rng, (2, 4, 3)): (nk.swapaxes(p[0], 1, 2) * w).sum())
    ops["index_basic"] = ([rng.normal(size=(5, 4))], lambda p, w=_w(rng, (3, 2)): (p[0][1:4, ::2] * w).sum())
    idx = np.array([0, 2, 2, 4])
    ops["index_adv"] = ([rng.normal(size=(5, 4))], lambda p, w=_w(rng, (4, 4)): (p[0][idx] * w).sum())
    ops["take"] = ([rng.normal(size=(3, 5, 2))],
                   lambda p, w=_w(rng, (3, 4, 2)): (nk.take(p[0], idx[[0, 1, 2, 3]] % 5, axis=1) * w).sum())
    ops["concat"] = ([rng.normal(size=(3, 2)), rng.normal(size=(3, 4))],
                     lambda p, w=_w(rng, (3, 6)): (nk.concat(p, axis=1) * w).sum())
    ops["stack"] = ([rng.normal(size=(3, 2)), rng.normal(size=(3, 2))],
                    lambda p, w=_w(rng, (3, 2, 2)): (nk.stack(p, axis=1) * w).sum())
    ops["matmul"] = ([rng.normal(size=(4, 3)), rng.normal(size=(3, 2))],
                     lambda p, w=_w(rng, (4, 2)): ((p[0] @ p[1]) * w).sum())
    ops["matmul_batched"] = ([rng.normal(size=(1, 5, 3)), rng.normal(size=(4, 3, 2))],
                             lambda p, w=_w(rng, (4, 5, 2)): ((p[0] @ p[1]) * w).sum())

    ops["kl_diag_gaussians"] = (
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) * 0.5, rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) * 0.5],
        lambda p: nk.kl_diag_gaussians(GaussianHead(p[0], p[1]), GaussianHead(p[2], p[3])))
    ops["gaussian_nll"] = (
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) * 0.5],
        lambda p: nk.gaussian_nll(p[0], GaussianHead(p[1], p[2])))
    eps = rng.normal(size=(2, 3))
    ops["reparam_sample"] = (
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) * 0.5],
        lambda p, w=_w(rng, (2, 3)): (GaussianHead(p[0], p[1]).sample(eps) * w).sum())
    ops["head_clamp"] = (
        [rng.normal(size=(2, 3)), rng.uniform(-8, 3, size=(2, 3))],
        lambda p, w=_w(rng, (2, 3)): (GaussianHead.from_raw(p[0], p[1]).log_var * w).sum())

    H, I = 3, 2
    ops["lstm_step"] = (
        [rng.normal(size=(2, I)), rng.normal(size=(2, H)), rng.normal(size=(2, H)),
         rng.normal(size=(I, 4 * H)) * 0.5, rng.normal(size=(H, 4 * H)) * 0.5, rng.normal(size=4 * H) * 0.5],
        lambda p, w=_w(rng, (2, H)), v=_w(rng, (2, H)): (
            (lambda hc: (hc[0] * w).sum() + (hc[1] * v).sum())(nk.lstm_step(p[0], p[1], p[2], (p[3], p[4], p[5])))))
    seq, keep = _lstm_seq_inputs(rng)
    ops["lstm_sequence"] = (
        seq,
        lambda p, w=_w(rng, (2, 4, 3)): (nk.lstm_sequence(p[0], (p[1], p[2], p[3]), keep=keep,
                                                          h0=p[4], c0=p[5]) * w).sum())

    ops["masked_mlp"] = (
        [rng.normal(size=(5, 4)), rng.normal(size=(3, 4, 6)) * 0.5, rng.normal(size=(3, 1, 6)) * 0.1,
         rng.normal(size=(3, 6, 2)) * 0.5, rng.normal(size=(3, 1, 2)) * 0.1, rng.uniform(0.1, 0.9, size=(3, 4))],
        lambda p, w=_w(rng, (5, 3, 2)): (_masked_mlp_fn(p) * w).sum())
    return ops


def _masked_mlp_fn(p):
    x, W1, b1, W2, b2, m = p
    mod = nk.MaskedMlp(3, 4, 6, np.random.default_rng(0))
    mod._params.update({"W1": W1, "b1": b1, "W2": W2, "b2": b2})
    return mod(x, m)
