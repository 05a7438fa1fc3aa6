"""Diagonal Gaussian heads, log-densities and KL divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from . import tensor as T
from .tensor import Tensor, as_tensor

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 4.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianHead:
    """N(mean, exp(log_var)) with independent coordinates."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ContractViolation(
                f"mean/log_var shape mismatch {self.mean.shape} vs {self.log_var.shape}")

    @classmethod
    def from_raw(cls, mean, raw_log_var) -> "GaussianHead":
        """Build a head, clamping the log-variance to [LOG_VAR_MIN, LOG_VAR_MAX]."""
        return cls(as_tensor(mean), T.clip(as_tensor(raw_log_var), LOG_VAR_MIN, LOG_VAR_MAX))

    @property
    def shape(self) -> tuple:
        return self.mean.shape

    def std(self) -> Tensor:
        return T.exp(self.log_var * 0.5)

    def sample(self, eps) -> Tensor:
        """Reparameterized draw mean + std * eps; deterministic given eps."""
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != self.shape:
            raise ContractViolation(f"eps shape {eps.shape} != head shape {self.shape}")
        return self.mean + self.std() * eps

    def detach(self) -> "GaussianHead":
        return GaussianHead(self.mean.detach(), self.log_var.detach())


def kl_diag_gaussians(q: GaussianHead, p: GaussianHead) -> Tensor:
    """KL(q || p) summed over every coordinate.

    Written as expm1(d) - d with d = log_var_q - log_var_p so the value is
    never negative in floating point and exactly zero for identical heads.
    """
    if q.shape != p.shape:
        raise ContractViolation(f"KL head shape mismatch {q.shape} vs {p.shape}")
    d = q.log_var - p.log_var
    diff = q.mean - p.mean
    terms = T.expm1(d) - d + T.square(diff) * T.exp(-p.log_var)
    return terms.sum() * 0.5


def gaussian_nll(x, head: GaussianHead) -> Tensor:
    """-log N(x; mean, exp(log_var)) summed over every coordinate."""
    x = as_tensor(x)
    if x.shape != head.shape:
        raise ContractViolation(f"NLL shape mismatch {x.shape} vs {head.shape}")
    resid = x - head.mean
    terms = head.log_var + T.square(resid) * T.exp(-head.log_var)
    return terms.sum() * 0.5 + 0.5 * LOG_2PI * x.size


def gaussian_log_prob(x: np.ndarray, mean: np.ndarray, log_var: np.ndarray) -> np.ndarray:
    """Plain-numpy elementwise log density (no tape)."""
    return -0.5 * (LOG_2PI + log_var + (x - mean) ** 2 * np.exp(-log_var))
