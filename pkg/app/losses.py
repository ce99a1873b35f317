"""Reconstruction objective: pixel MSE, perceptual similarity, adversarial term and their weighted sum."""
from typing import NamedTuple

import torch
import torch.nn.functional as F

from app.errors import InvalidArgumentError
from app.models.network import TrainConfig
from app.networks import PROB_EPS, Discriminator, FeatureExtractor


class LossTerms(NamedTuple):
    mse: torch.Tensor
    sim: torch.Tensor
    adv: torch.Tensor
    total: torch.Tensor


def _same_shape(x: torch.Tensor, x_hat: torch.Tensor) -> None:
    if x.shape != x_hat.shape:
        raise InvalidArgumentError(f"batch shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")


def mse_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the per-image mean squared pixel error."""
    _same_shape(x, x_hat)
    return F.mse_loss(x_hat, x)


def perceptual_loss(extractor: FeatureExtractor, x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Squared feature-map distance at the extractor's layer, averaged over positions, channels and batch.

    Features of the reference batch are computed without gradient.
    """
    _same_shape(x, x_hat)
    with torch.no_grad():
        target = extractor(x)
    return F.mse_loss(extractor(x_hat), target)


def adversarial_loss_from_probs(probs: torch.Tensor) -> torch.Tensor:
    return -torch.log(probs.clamp(PROB_EPS, 1.0 - PROB_EPS)).mean()


def adversarial_loss(discriminator: Discriminator, x_hat: torch.Tensor) -> torch.Tensor:
    """(1/M) sum -log D(x_hat_i)."""
    return adversarial_loss_from_probs(discriminator(x_hat))


def discriminator_loss_from_probs(real_probs: torch.Tensor, fake_probs: torch.Tensor) -> torch.Tensor:
    real = real_probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    fake = fake_probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(torch.log(real).mean() + torch.log1p(-fake).mean())


def discriminator_loss(discriminator: Discriminator, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy with real labelled 1 and generated labelled 0."""
    _same_shape(real, fake)
    return discriminator_loss_from_probs(discriminator(real), discriminator(fake))


def combine_losses(mse, sim, adv, lambda_sim: float, lambda_adv: float):
    return mse + lambda_sim * sim + lambda_adv * adv


def total_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    extractor: FeatureExtractor,
    discriminator: Discriminator,
    cfg: TrainConfig,
) -> LossTerms:
    """l_rec = l_mse + lambda_sim * l_sim + lambda_adv * l_adv."""
    mse = mse_loss(x, x_hat)
    sim = perceptual_loss(extractor, x, x_hat)
    adv = adversarial_loss(discriminator, x_hat)
    return LossTerms(mse, sim, adv, combine_losses(mse, sim, adv, cfg.lambda_sim, cfg.lambda_adv))
