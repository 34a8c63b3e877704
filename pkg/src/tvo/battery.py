"""Seeded reference models and random batteries for the verification suite."""

from __future__ import annotations

import numpy as np

from .models import DiscreteLatentModel, LinearGaussianModel
from .schedules import Schedule

__all__ = [
    "two_state_reference",
    "flat_discrete",
    "sharp_discrete",
    "random_discrete",
    "random_schedule",
    "random_gaussian",
    "random_gaussian_1d",
    "equal_cov_mean_mismatch",
    "posterior_matched",
]


def two_state_reference() -> DiscreteLatentModel:
    """The q = [.5, .5], p = [.1, .3] worked example used throughout."""
    return DiscreteLatentModel([0.5, 0.5], [0.1, 0.3])


def flat_discrete(n_states: int = 4, log_px: float = -1.25) -> DiscreteLatentModel:
    """Proposal equal to the posterior: constant integrand at log_px."""
    q = np.full(n_states, 1.0 / n_states)
    return DiscreteLatentModel(q, np.exp(log_px) * q)


def sharp_discrete() -> DiscreteLatentModel:
    """Strongly mismatched proposal; the integrand rises sharply near 0."""
    q = np.array([0.96, 0.02, 0.02])
    p = np.array([1e-7, 0.3, 0.5])
    return DiscreteLatentModel(q, p)


def random_discrete(rng: np.random.Generator, max_states: int = 16, spread: float = 2.0) -> DiscreteLatentModel:
    n = int(rng.integers(2, max_states + 1))
    logits = rng.normal(0.0, 1.0, n)
    q = np.exp(logits - logits.max())
    q /= q.sum()
    log_p = rng.normal(-1.0, spread, n)
    return DiscreteLatentModel(q, np.exp(log_p))


def random_schedule(rng: np.random.Generator, max_k: int = 16) -> Schedule:
    k = int(rng.integers(1, max_k + 1))
    if k == 1:
        return Schedule((0.0, 1.0))
    interior = np.sort(rng.uniform(0.01, 0.99, k - 1))
    interior = np.unique(np.round(interior, 12))
    return Schedule((0.0, *interior, 1.0))


def random_gaussian(
    rng: np.random.Generator, d_z: int = 1, d_x: int = 2
) -> tuple[LinearGaussianModel, np.ndarray]:
    model = LinearGaussianModel(
        decoder_weight=rng.uniform(-1.5, 1.5, (d_x, d_z)),
        decoder_bias=rng.uniform(-1.0, 1.0, d_x),
        obs_stddev=rng.uniform(0.5, 1.5),
        encoder_mean=rng.uniform(-1.0, 1.0, d_z),
        encoder_stddev=rng.uniform(0.5, 1.5, d_z),
    )
    x = rng.uniform(-1.5, 1.5, d_x)
    return model, x


def random_gaussian_1d(rng: np.random.Generator, d_x: int = 1) -> tuple[LinearGaussianModel, np.ndarray]:
    return random_gaussian(rng, d_z=1, d_x=d_x)


def equal_cov_mean_mismatch() -> tuple[LinearGaussianModel, np.ndarray]:
    """Encoder covariance equal to the posterior's but with a shifted mean.

    log w is then linear in z, so the path variance is constant and the
    integrand is exactly linear in beta.
    """
    a, sigma = 1.0, 1.0
    post_prec = 1.0 + a * a / sigma**2
    model = LinearGaussianModel(
        decoder_weight=[[a]],
        decoder_bias=[0.0],
        obs_stddev=sigma,
        encoder_mean=[-0.5],
        encoder_stddev=[1.0 / np.sqrt(post_prec)],
    )
    return model, np.array([2.0])


def posterior_matched(model: LinearGaussianModel, x) -> LinearGaussianModel:
    """Copy of the model whose encoder equals the exact posterior at x.

    Only valid when the posterior covariance is diagonal (always true for a
    1-d latent space); otherwise the diagonal encoder cannot represent it.
    """
    mean, cov = model.posterior(x)
    off_diag = cov - np.diag(np.diag(cov))
    if np.max(np.abs(off_diag)) > 1e-12 * np.max(np.abs(cov)):
        raise ValueError("posterior covariance is not diagonal")
    return LinearGaussianModel(
        decoder_weight=model.decoder_weight,
        decoder_bias=model.decoder_bias,
        obs_stddev=model.obs_stddev,
        encoder_mean=mean,
        encoder_stddev=np.sqrt(np.diag(cov)),
    )
