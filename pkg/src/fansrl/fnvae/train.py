"""Training loop with separate parameter groups and the updateG guard.

Each epoch draws one batch of windows and takes one Adam step per group:

    phi     ∇ total
    gamma   ∇ (kl + smooth)
    alpha   ∇ (rec_dyn + pred_dyn)
    beta    ∇ (rec_rw + pred_rw)
    G       ∇ (rec_dyn + rec_rw + kl + sparse)     only when update_g

The decoders and priors each appear in exactly one weighted component of
``total``, so their group gradients are the total gradient divided by that
component's weight. Only G needs a second backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, NumericalError
from ..numkit import Adam, Tape, grad
from ..rng import substream
from .batch import Stream, make_batch, window_starts
from .losses import LossWeights, Smoothness, loss_values, losses_for
from .model import FnVaeParams


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch: int = 8
    window: int = 50
    lr: float = 1e-3
    lr_g: float = 1e-2
    update_g: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    smooth: Smoothness = field(default_factory=Smoothness)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.window < 3:
            raise ContractViolation("need epochs >= 0, batch >= 1, window >= 3")


class FnVaeTrainer:
    """Holds per-group optimizer state so online refreshes continue smoothly."""

    def __init__(self, params: FnVaeParams, cfg: TrainConfig):
        self.params, self.cfg = params, cfg
        self.opt = {g: Adam(params.group(g), lr=cfg.lr_g if g == "G" else cfg.lr) for g in params.GROUPS}
        self.rng = substream(cfg.seed, "fnvae-train")
        self.history: list[dict[str, float]] = []

    def _scales(self) -> dict[str, float]:
        w = self.cfg.weights
        inv = lambda k: 1.0 / k if k > 0 else 0.0  # noqa: E731
        return {"phi": 1.0, "gamma": inv(w.k3), "alpha1": inv(w.k1), "alpha2": inv(w.k2),
                "beta1": inv(w.k1), "beta2": inv(w.k2)}

    def step_batch(self, batch, update_g: bool | None = None) -> dict[str, float]:
        update_g = self.cfg.update_g if update_g is None else update_g
        p = self.params
        with Tape():
            parts = losses_for(p, batch, self.cfg.weights, self.cfg.smooth, self.rng)
            vals = loss_values(parts)
            if not np.isfinite(vals["total"]):
                raise NumericalError("FN-VAE loss is not finite", self._snapshot(vals, batch))
            try:
                if update_g:
                    lg = parts["rec_dyn"] + parts["rec_rw"] + parts["kl"] + parts["sparse"]
                    g_grads = grad(lg, p.group("G"), retain=True)
                groups = [g for g in p.GROUPS if g != "G"]
                flat = [t for g in groups for t in p.group(g)]
                grads = grad(parts["total"], flat)
            except NumericalError as exc:
                raise NumericalError(str(exc), self._snapshot(vals, batch)) from exc
        scales = self._scales()
        i = 0
        for g in groups:
            n = len(p.group(g))
            self.opt[g].step([x * scales[g] for x in grads[i:i + n]])
            i += n
        if update_g:
            self.opt["G"].step(g_grads)
        return vals

    def _snapshot(self, vals, batch) -> dict:
        return {"losses": vals, "t_tilde": batch.t_tilde[:, 0].tolist(),
                "params": {k: v.data.copy() for k, v in self.params.named_params().items()}}

    def fit(self, stream: Stream, epochs: int | None = None, changepoints=None, update_g: bool | None = None):
        epochs = self.cfg.epochs if epochs is None else epochs
        if len(stream) == 0:
            raise ContractViolation("no training data")
        k = min(self.cfg.window, len(stream))
        for _ in range(epochs):
            starts = window_starts(stream, k, self.cfg.batch, self.rng, changepoints)
            self.history.append(self.step_batch(make_batch(stream, starts, k, changepoints), update_g))
        return self.history


def train_fnvae(params: FnVaeParams, data, cfg: TrainConfig = TrainConfig(), changepoints=None) -> FnVaeParams:
    """Train ``params`` in place on trajectories (or a Stream) and return them.

    ``changepoints`` selects the discrete objective. The loss history is
    attached as ``params.history``.
    """
    stream = data if isinstance(data, Stream) else Stream.from_trajectories(list(data))
    if stream.s.shape[1] != params.cfg.d or stream.a.shape[1] != params.cfg.m:
        raise ContractViolation("data dimensions do not match the model")
    trainer = FnVaeTrainer(params, cfg)
    params.history = trainer.fit(stream, changepoints=changepoints)
    return params
