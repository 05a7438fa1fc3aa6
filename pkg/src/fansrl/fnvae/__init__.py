"""FN-VAE: a variational model of a factored MDP with latent change factors."""

from .batch import SeqBatch, Stream, make_batch, trajectory_batch, window_starts
from .infer import CfInference, cf_prior, infer_cf, segment_posteriors
from .losses import (LossWeights, Smoothness, compute_losses, compute_losses_discrete, decoder_terms,
                     loss_values, losses_for, smoothness, sparsity, weighted_kl, weighted_nll)
from .model import FnVaeConfig, FnVaeParams, InferenceNet, PriorNet, extract_masks, soft_masks
from .train import FnVaeTrainer, TrainConfig, train_fnvae

__all__ = [
    "FnVaeConfig", "FnVaeParams", "InferenceNet", "PriorNet", "extract_masks", "soft_masks",
    "Stream", "SeqBatch", "make_batch", "trajectory_batch", "window_starts",
    "CfInference", "infer_cf", "cf_prior", "segment_posteriors",
    "LossWeights", "Smoothness", "compute_losses", "compute_losses_discrete", "decoder_terms", "losses_for",
    "loss_values", "smoothness", "sparsity", "weighted_kl", "weighted_nll",
    "FnVaeTrainer", "TrainConfig", "train_fnvae",
]
