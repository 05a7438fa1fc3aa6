"""Posterior and prior evaluation outside of training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from ..numkit import GaussianHead
from .batch import SeqBatch, trajectory_batch
from .losses import segment_heads
from .model import FnVaeParams, PriorNet


@dataclass
class CfInference:
    """Per-step posterior heads and reparameterized samples, shaped (B, T, k)."""

    head_s: GaussianHead
    head_r: GaussianHead
    theta_s: np.ndarray
    theta_r: np.ndarray
    eps_s: np.ndarray
    eps_r: np.ndarray


def _as_batch(data, changepoints=None) -> SeqBatch:
    if isinstance(data, SeqBatch):
        return data
    if len(data) < 2:
        raise ContractViolation("change-factor inference needs at least 2 steps")
    return trajectory_batch(data, changepoints)


def infer_cf(params: FnVaeParams, data, rng: np.random.Generator | None = None) -> CfInference:
    """Run both inference LSTMs over a trajectory or batch.

    Samples use fresh standard-normal noise from ``rng``; without one the
    samples are the posterior means.
    """
    batch = _as_batch(data)
    if batch.shape[1] < 2:
        raise ContractViolation("change-factor inference needs at least 2 steps")
    x = params.lstm_input(batch.s, batch.a, batch.r, batch.s_next)
    hs, hr = params.infer(x, batch.keep)
    es = np.zeros(hs.shape) if rng is None else rng.standard_normal(hs.shape)
    er = np.zeros(hr.shape) if rng is None else rng.standard_normal(hr.shape)
    return CfInference(hs, hr, hs.sample(es).data, hr.sample(er).data, es, er)


def segment_posteriors(params: FnVaeParams, data, changepoints) -> tuple[GaussianHead, GaussianHead, SeqBatch]:
    """Posterior per change segment of a trajectory or batch: heads shaped (B, M, k)."""
    batch = data if isinstance(data, SeqBatch) else trajectory_batch(data, changepoints)
    hs, hr = segment_heads(params, batch)
    return hs, hr, batch


def cf_prior(theta_prev, net: PriorNet, mask) -> GaussianHead:
    """p(θ_t | θ_{t-1}) for a single vector or a stack of rows."""
    theta_prev = np.asarray(theta_prev, dtype=np.float64)
    if theta_prev.shape[-1] != net.k:
        raise ContractViolation(f"θ has dimension {theta_prev.shape[-1]}, prior expects {net.k}")
    single = theta_prev.ndim == 1
    head = net(theta_prev.reshape(-1, net.k), np.asarray(mask, dtype=np.float64))
    if single:
        return GaussianHead(head.mean[0], head.log_var[0])
    return head
