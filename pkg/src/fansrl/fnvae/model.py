"""FN-VAE parameters: change-factor inference LSTMs, change-factor priors,
transition and reward decoders, and the mask logits of the learned graph."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import numkit as nk
from ..checkpoint import read_container, write_container
from ..errors import ContractViolation
from ..graph import MASK_NAMES, FnMdpGraph
from ..numkit import GaussianHead, Lstm, MaskedMlp, Mlp, Module, Tensor
from ..rng import substream


@dataclass(frozen=True)
class FnVaeConfig:
    d: int
    m: int
    p: int = 2
    q: int = 2
    embed: int = 32
    lstm: int = 32
    dec_hidden: int = 32
    prior_hidden: int = 16
    # prior mean = diag(C) * θ_prev + net(C ⊙ θ_prev); keeps masked inputs fully cut
    prior_residual: bool = True
    mask_init: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.m, self.p, self.q) < 1:
            raise ContractViolation("FN-VAE needs d, m, p, q >= 1")

    @property
    def n_x(self) -> int:
        """Per-step inference input: (s, a, r, s_next)."""
        return 2 * self.d + self.m + 1


class InferenceNet(Module):
    """tanh embedding -> LSTM -> linear Gaussian head (mean, raw log-variance)."""

    def __init__(self, n_in: int, embed: int, hidden: int, k: int, rng):
        super().__init__()
        self.k = k
        self.embed = self.add_child("embed", Mlp([n_in, embed], rng))
        self.lstm = self.add_child("lstm", Lstm(embed, hidden, rng))
        self.head = self.add_child("head", Mlp([hidden, 2 * k], rng))

    def __call__(self, x, keep=None) -> Tensor:
        e = nk.tanh(self.embed(x))
        return self.head(nk.lstm_sequence(e, self.lstm.weights, keep))

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        """One filtering step on a single input row; returns (out, h, c)."""
        e = np.tanh(self.embed.forward_numpy(x[None, :]))
        h2, c2 = nk.lstm_step(e, h[None, :], c[None, :], self.lstm.weights)
        return self.head.forward_numpy(h2.data)[0], h2.data[0], c2.data[0]


class PriorNet(Module):
    """p(θ_t | θ_{t-1}) with a per-output masked input."""

    def __init__(self, k: int, hidden: int, residual: bool, rng):
        super().__init__()
        self.k, self.residual = k, residual
        self.net = self.add_child("net", MaskedMlp(k, k, hidden, rng))

    def __call__(self, theta_prev, mask) -> GaussianHead:
        theta_prev, mask = nk.as_tensor(theta_prev), nk.as_tensor(mask)
        out = self.net(theta_prev, mask)
        mean = out[..., 0]
        if self.residual:
            diag = nk.index(mask, (np.arange(self.k), np.arange(self.k)))
            mean = mean + theta_prev * diag
        return GaussianHead.from_raw(mean, out[..., 1])


def _split_head(out: Tensor, k: int) -> GaussianHead:
    return GaussianHead.from_raw(out[..., :k], out[..., k:])


class FnVaeParams(Module):
    """All trainable FN-VAE pieces plus fixed input normalization.

    Masks enter forward passes as sigmoid(logit) while ``mask_mode`` is
    "soft" and as the 0/1 threshold at 0.5 while it is "hard".
    """

    GROUPS = ("phi", "gamma", "alpha1", "alpha2", "beta1", "beta2", "G")

    def __init__(self, cfg: FnVaeConfig):
        super().__init__()
        self.cfg = cfg
        d, m, p, q = cfg.d, cfg.m, cfg.p, cfg.q
        rng = substream(cfg.seed, "fnvae-init")
        self.phi_s = self.add_child("phi_s", InferenceNet(cfg.n_x, cfg.embed, cfg.lstm, p, rng))
        self.phi_r = self.add_child("phi_r", InferenceNet(cfg.n_x, cfg.embed, cfg.lstm, q, rng))
        self.gamma_s = self.add_child("gamma_s", PriorNet(p, cfg.prior_hidden, cfg.prior_residual, rng))
        self.gamma_r = self.add_child("gamma_r", PriorNet(q, cfg.prior_hidden, cfg.prior_residual, rng))
        self.alpha1 = self.add_child("alpha1", MaskedMlp(d, d + m + p, cfg.dec_hidden, rng))
        self.alpha2 = self.add_child("alpha2", Mlp([d + m + p, cfg.dec_hidden, 2 * d], rng))
        self.beta1 = self.add_child("beta1", MaskedMlp(1, d + m + q, cfg.dec_hidden, rng))
        self.beta2 = self.add_child("beta2", Mlp([d + m + q, cfg.dec_hidden, 2], rng))
        self.G = self.add_child("G", Module())
        shapes = {"Css": (d, d), "Cas": (d, m), "Cts": (d, p), "csr": (d,), "car": (m,),
                  "Ctt_s": (p, p), "Ctt_r": (q, q)}
        for name in MASK_NAMES:
            self.G.add_param(name, np.full(shapes[name], float(cfg.mask_init)))
        self.mask_mode = "soft"
        self.norm = {"s_mu": np.zeros(d), "s_sd": np.ones(d), "r_mu": np.zeros(1), "r_sd": np.ones(1)}

    # ---- parameter groups --------------------------------------------------

    def group(self, name: str) -> list[Tensor]:
        if name == "phi":
            return self.phi_s.params() + self.phi_r.params()
        if name == "gamma":
            return self.gamma_s.params() + self.gamma_r.params()
        if name not in self.GROUPS:
            raise ContractViolation(f"unknown parameter group {name!r}")
        return getattr(self, name).params()

    def copy(self) -> "FnVaeParams":
        out = FnVaeParams(self.cfg)
        for k, v in self.named_params().items():
            out.set_param(k, v.data)
        out.mask_mode = self.mask_mode
        out.norm = {k: v.copy() for k, v in self.norm.items()}
        return out

    # ---- normalization -------------------------------------------------------

    def fit_normalizer(self, s: np.ndarray, r: np.ndarray) -> None:
        """Standardize states and rewards with statistics of the given rows."""
        s, r = np.asarray(s, dtype=np.float64), np.asarray(r, dtype=np.float64).ravel()
        self.norm = {"s_mu": s.mean(0), "s_sd": np.maximum(s.std(0), 1e-3),
                     "r_mu": np.array([r.mean()]), "r_sd": np.array([max(r.std(), 1e-3)])}

    def ns(self, s: np.ndarray) -> np.ndarray:
        return (s - self.norm["s_mu"]) / self.norm["s_sd"]

    def nr(self, r: np.ndarray) -> np.ndarray:
        return (r - self.norm["r_mu"][0]) / self.norm["r_sd"][0]

    def lstm_input(self, s, a, r, s_next) -> np.ndarray:
        return np.concatenate([self.ns(s), a, self.nr(r)[..., None], self.ns(s_next)], axis=-1)

    # ---- masks ---------------------------------------------------------------

    def mask(self, name: str) -> Tensor:
        logit = self.G.param(name)
        if self.mask_mode == "hard":
            return Tensor((logit.data > 0.0).astype(np.float64))
        return nk.sigmoid(logit)

    def dyn_mask(self) -> Tensor:
        return nk.concat([self.mask("Css"), self.mask("Cas"), self.mask("Cts")], axis=1)

    def rew_mask(self) -> Tensor:
        # θʳ always feeds the reward
        row = nk.concat([self.mask("csr"), self.mask("car"), Tensor(np.ones(self.cfg.q))], axis=0)
        return nk.reshape(row, (1, -1))

    # ---- components ------------------------------------------------------------

    def infer(self, x, keep=None) -> tuple[GaussianHead, GaussianHead]:
        """Per-step posterior heads for θˢ and θʳ from inputs (B, T, n_x)."""
        return (_split_head(self.phi_s(x, keep), self.cfg.p),
                _split_head(self.phi_r(x, keep), self.cfg.q))

    def prior_s(self, theta_prev) -> GaussianHead:
        return self.gamma_s(theta_prev, self.mask("Ctt_s"))

    def prior_r(self, theta_prev) -> GaussianHead:
        return self.gamma_r(theta_prev, self.mask("Ctt_r"))

    def rec_dyn(self, ns, a, theta_s) -> GaussianHead:
        """Head over the normalized next state from (s, a, θˢ) rows, masked by (Css, Cas, Cts)."""
        out = self.alpha1(nk.concat([ns, a, theta_s], axis=-1), self.dyn_mask())
        return GaussianHead.from_raw(out[..., 0], out[..., 1])

    def pred_dyn(self, ns, a, theta_s) -> GaussianHead:
        return _split_head(self.alpha2(nk.concat([ns, a, theta_s], axis=-1)), self.cfg.d)

    def rec_rw(self, ns, a, theta_r) -> GaussianHead:
        out = self.beta1(nk.concat([ns, a, theta_r], axis=-1), self.rew_mask())
        return GaussianHead.from_raw(out[..., 0], out[..., 1])

    def pred_rw(self, ns, a, theta_r) -> GaussianHead:
        return _split_head(self.beta2(nk.concat([ns, a, theta_r], axis=-1)), 1)

    # ---- serialization ------------------------------------------------------------

    def save(self, path) -> None:
        meta = {"kind": "fnvae", "config": asdict(self.cfg), "mask_mode": self.mask_mode}
        write_container(path, {"fnvae": {k: v.data for k, v in self.named_params().items()},
                               "norm": self.norm}, meta)

    @classmethod
    def load(cls, path) -> "FnVaeParams":
        meta, sections = read_container(path)
        if meta.get("kind") != "fnvae":
            raise ContractViolation(f"{path}: not an FN-VAE checkpoint")
        out = cls(FnVaeConfig(**meta["config"]))
        for k, v in sections["fnvae"].items():
            out.set_param(k, v)
        out.norm = dict(sections["norm"])
        out.mask_mode = meta["mask_mode"]
        return out


def soft_masks(params: FnVaeParams) -> dict[str, np.ndarray]:
    return {k: 1.0 / (1.0 + np.exp(-params.G.param(k).data)) for k in MASK_NAMES}


def extract_masks(params: FnVaeParams, threshold: float = 0.5) -> FnMdpGraph:
    """Hard graph: an entry is an edge iff sigmoid(logit) > threshold."""
    c = params.cfg
    masks = {k: (v > threshold).astype(np.uint8) for k, v in soft_masks(params).items()}
    return FnMdpGraph.empty(c.d, c.m, c.p, c.q).replace(**masks)
