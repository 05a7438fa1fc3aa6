"""FN-VAE objective.

Every component is a minimized quantity:

    total = k1 (rec_dyn + rec_rw) + k2 (pred_dyn + pred_rw) + k3 kl + k4 sparse + k5 smooth

with rec/pred the Gaussian negative log-likelihoods of the decoders. Per-step
terms are summed over time and averaged over the windows of a batch; the
sparsity term is a property of the model and is not averaged.

Record alignment (row t holds s[t], a[t], r[t], s_next[t] and θ[t]):
    rec_dyn   s_next[t]   | s[t],   a[t],   θˢ[t]    masked by Css, Cas, Cts
    pred_dyn  s_next[t+1] | s[t+1], a[t+1], θˢ[t]
    rec_rw    r[t]        | s[t],   a[t],   θʳ[t]    masked by csr, car
    pred_rw   r[t+1]      | s[t+1], a[t+1], θʳ[t]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numkit as nk
from ..errors import ContractViolation
from ..graph import MASK_NAMES
from ..numkit import GaussianHead, Tensor
from ..numkit.gaussian import LOG_2PI
from .batch import SeqBatch
from .model import FnVaeParams, _split_head


@dataclass(frozen=True)
class LossWeights:
    k1: float = 0.8
    k2: float = 0.8
    k3: float = 0.5
    k4: float = 0.1
    k5: float = 0.02
    # sparsity weights in mask order Css, Cas, Cts, csr, car, Ctt_s, Ctt_r
    w: tuple = field(default=(0.1,) * 7)

    def __post_init__(self):
        if len(self.w) != 7:
            raise ContractViolation("need 7 sparsity weights")
        if min(self.k1, self.k2, self.k3, self.k4, self.k5, *self.w) < 0:
            raise ContractViolation("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "k4": self.k4, "k5": self.k5, "w": list(self.w)}

    @classmethod
    def from_dict(cls, doc: dict) -> "LossWeights":
        doc = dict(doc)
        if "w" in doc:
            doc["w"] = tuple(float(x) for x in doc["w"])
        return cls(**doc)


@dataclass(frozen=True)
class Smoothness:
    """l1: |θ_t - θ_{t-1}|;  ma: |θ_t - mean(θ_{t-T..t-1})|;  ema: |θ_t - v_{t-1}|,
    v_t = β θ_t + (1-β) v_{t-1}, v_{-1} = 0."""

    kind: str = "l1"
    window: int = 2
    beta: float = 0.98

    def __post_init__(self):
        if self.kind not in ("l1", "ma", "ema"):
            raise ContractViolation(f"unknown smoothness variant {self.kind!r}")
        if self.kind == "ma" and self.window < 2:
            raise ContractViolation("moving-average window must be >= 2")
        if self.kind == "ema" and not 0.0 < self.beta < 1.0:
            raise ContractViolation("EMA beta must lie in (0, 1)")

    def reference(self, n: int) -> np.ndarray:
        """Matrix R with (R θ)_t the value θ_t is compared against (row 0 unused)."""
        R = np.zeros((n, n))
        for t in range(1, n):
            if self.kind == "l1":
                R[t, t - 1] = 1.0
            elif self.kind == "ma":
                lo = max(0, t - self.window)
                R[t, lo:t] = 1.0 / (t - lo)
            else:
                j = np.arange(t)
                R[t, :t] = self.beta * (1.0 - self.beta) ** (t - 1 - j)
        return R


def smoothness(theta, weight, variant: Smoothness = Smoothness()) -> Tensor:
    """Σ_t weight[b, t] · ||θ[b, t] - (R θ[b])_t||_1 for θ of shape (B, S, k)."""
    theta = nk.as_tensor(theta)
    ref = nk.matmul(variant.reference(theta.shape[1]), theta)
    w = np.asarray(weight, dtype=np.float64).copy()
    w[:, 0] = 0.0
    return (nk.tabs(theta - ref) * w[:, :, None]).sum()


def weighted_nll(x, head: GaussianHead, w) -> Tensor:
    """Σ w · (-log N(x; mean, exp(log_var))), w broadcast over trailing dims."""
    x = nk.as_tensor(x)
    if x.shape != head.shape:
        raise ContractViolation(f"NLL shape mismatch {x.shape} vs {head.shape}")
    terms = head.log_var + nk.square(x - head.mean) * nk.exp(-head.log_var) + LOG_2PI
    return (terms * np.asarray(w, dtype=np.float64)).sum() * 0.5


def weighted_kl(q: GaussianHead, p: GaussianHead, w) -> Tensor:
    """Σ w · KL(q || p) per row, same closed form as ``kl_diag_gaussians``."""
    dl = q.log_var - p.log_var
    terms = nk.expm1(dl) - dl + nk.square(q.mean - p.mean) * nk.exp(-p.log_var)
    return (terms * np.asarray(w, dtype=np.float64)).sum() * 0.5


def sparsity(params: FnVaeParams, weights: LossWeights) -> Tensor:
    total = Tensor(0.0)
    for wi, name in zip(weights.w, MASK_NAMES):
        if wi:
            total = total + nk.sigmoid(params.G.param(name)).sum() * wi
    return total


def _flat(x, k: int):
    return nk.reshape(x, (-1, k)) if isinstance(x, Tensor) else np.asarray(x).reshape(-1, k)


def decoder_terms(params: FnVaeParams, batch: SeqBatch, th_s, th_r) -> dict[str, Tensor]:
    """Reconstruction and prediction NLLs given per-step θ of shape (B, T, p|q)."""
    c = params.cfg
    d, m, p, q = c.d, c.m, c.p, c.q
    ns, nsn = params.ns(batch.s), params.ns(batch.s_next)
    nr = params.nr(batch.r)
    a = batch.a
    th_s, th_r = nk.as_tensor(th_s), nk.as_tensor(th_r)
    out = {}
    out["rec_dyn"] = weighted_nll(_flat(nsn, d), params.rec_dyn(_flat(ns, d), _flat(a, m), _flat(th_s, p)), 1.0)
    out["rec_rw"] = weighted_nll(_flat(nr, 1), params.rec_rw(_flat(ns, d), _flat(a, m), _flat(th_r, q)), 1.0)
    w = batch.pred_valid[:, :-1].reshape(-1, 1)
    ps, pa = _flat(ns[:, 1:], d), _flat(a[:, 1:], m)
    out["pred_dyn"] = weighted_nll(_flat(nsn[:, 1:], d), params.pred_dyn(ps, pa, _flat(th_s[:, :-1], p)), w)
    out["pred_rw"] = weighted_nll(_flat(nr[:, 1:], 1), params.pred_rw(ps, pa, _flat(th_r[:, :-1], q)), w)
    return out


def _draw(rng, shape) -> np.ndarray:
    return np.zeros(shape) if rng is None else rng.standard_normal(shape)


def _assemble(parts: dict, weights: LossWeights) -> dict[str, Tensor]:
    w = weights
    parts["total"] = ((parts["rec_dyn"] + parts["rec_rw"]) * w.k1 + (parts["pred_dyn"] + parts["pred_rw"]) * w.k2
                      + parts["kl"] * w.k3 + parts["sparse"] * w.k4 + parts["smooth"] * w.k5)
    return parts


def _check(batch: SeqBatch) -> None:
    if batch.shape[1] < 3:
        raise ContractViolation(f"FN-VAE losses need windows of length >= 3, got {batch.shape[1]}")


def compute_losses(params: FnVaeParams, batch: SeqBatch, weights: LossWeights = LossWeights(),
                   variant: Smoothness = Smoothness(), rng: np.random.Generator | None = None,
                   eps=None) -> dict[str, Tensor]:
    """Continuous-change objective: θ inferred and sampled at every step.

    ``eps`` (pair of arrays shaped like the θ samples) overrides ``rng``;
    with neither, samples are the posterior means.
    """
    _check(batch)
    c = params.cfg
    B, T = batch.shape
    x = params.lstm_input(batch.s, batch.a, batch.r, batch.s_next)
    qs, qr = params.infer(x, batch.keep)
    es, er = eps if eps is not None else (_draw(rng, (B, T, c.p)), _draw(rng, (B, T, c.q)))
    th_s, th_r = qs.sample(es), qr.sample(er)
    parts = decoder_terms(params, batch, th_s, th_r)
    w = batch.link[:, 1:].reshape(-1, 1)
    kl_s = weighted_kl(GaussianHead(_flat(qs.mean[:, 1:], c.p), _flat(qs.log_var[:, 1:], c.p)),
                       params.prior_s(_flat(th_s[:, :-1], c.p)), w)
    kl_r = weighted_kl(GaussianHead(_flat(qr.mean[:, 1:], c.q), _flat(qr.log_var[:, 1:], c.q)),
                       params.prior_r(_flat(th_r[:, :-1], c.q)), w)
    parts["kl"] = kl_s + kl_r
    parts["smooth"] = smoothness(th_s, batch.link, variant) + smoothness(th_r, batch.link, variant)
    parts = {k: v * (1.0 / B) for k, v in parts.items()}
    parts["sparse"] = sparsity(params, weights)
    parts["theta_s"], parts["theta_r"] = th_s, th_r
    return _assemble(parts, weights)


def segment_heads(params: FnVaeParams, batch: SeqBatch, x=None) -> tuple[GaussianHead, GaussianHead]:
    """Posterior per change segment, read at each segment's last step: (B, M, p|q)."""
    c = params.cfg
    B, T = batch.shape
    M = batch.seg_last.shape[1]
    if x is None:
        x = params.lstm_input(batch.s, batch.a, batch.r, batch.s_next)
    rows = (np.arange(B)[:, None] * T + batch.seg_last).ravel()
    heads = []
    for net, k in ((params.phi_s, c.p), (params.phi_r, c.q)):
        out = nk.take(nk.reshape(net(x, batch.keep), (B * T, 2 * k)), rows, axis=0)
        heads.append(_split_head(nk.reshape(out, (B, M, 2 * k)), k))
    return heads[0], heads[1]


def compute_losses_discrete(params: FnVaeParams, batch: SeqBatch, weights: LossWeights = LossWeights(),
                            variant: Smoothness = Smoothness(), rng: np.random.Generator | None = None,
                            eps=None) -> dict[str, Tensor]:
    """Discrete-change objective: one θ draw per change segment, shared by its steps.

    KL and smoothness run over consecutive segments of a window.
    """
    _check(batch)
    if not batch.discrete:
        raise ContractViolation("discrete losses need a batch built with change points")
    c = params.cfg
    B, T = batch.shape
    M = batch.seg_last.shape[1]
    qs, qr = segment_heads(params, batch)
    es, er = eps if eps is not None else (_draw(rng, (B, M, c.p)), _draw(rng, (B, M, c.q)))
    seg_s, seg_r = qs.sample(es), qr.sample(er)
    rows = (np.arange(B)[:, None] * M + batch.seg).ravel()
    th_s = nk.reshape(nk.take(_flat(seg_s, c.p), rows, axis=0), (B, T, c.p))
    th_r = nk.reshape(nk.take(_flat(seg_r, c.q), rows, axis=0), (B, T, c.q))
    parts = decoder_terms(params, batch, th_s, th_r)
    sv = batch.seg_valid
    if M > 1:
        w = sv[:, 1:].reshape(-1, 1)
        kl_s = weighted_kl(GaussianHead(_flat(qs.mean[:, 1:], c.p), _flat(qs.log_var[:, 1:], c.p)),
                           params.prior_s(_flat(seg_s[:, :-1], c.p)), w)
        kl_r = weighted_kl(GaussianHead(_flat(qr.mean[:, 1:], c.q), _flat(qr.log_var[:, 1:], c.q)),
                           params.prior_r(_flat(seg_r[:, :-1], c.q)), w)
        parts["kl"] = kl_s + kl_r
        parts["smooth"] = smoothness(seg_s, sv, variant) + smoothness(seg_r, sv, variant)
    else:
        parts["kl"] = Tensor(0.0)
        parts["smooth"] = Tensor(0.0)
    parts = {k: v * (1.0 / B) for k, v in parts.items()}
    parts["sparse"] = sparsity(params, weights)
    parts["theta_s"], parts["theta_r"] = th_s, th_r
    return _assemble(parts, weights)


def losses_for(params: FnVaeParams, batch: SeqBatch, weights: LossWeights = LossWeights(),
               variant: Smoothness = Smoothness(), rng=None, eps=None) -> dict[str, Tensor]:
    fn = compute_losses_discrete if batch.discrete else compute_losses
    return fn(params, batch, weights, variant, rng, eps)


def loss_values(parts: dict[str, Tensor]) -> dict[str, float]:
    return {k: float(v.data) for k, v in parts.items() if v.data.shape == ()}
