"""Exactly evaluable models and the geometric mixture path between proposal
and target.

For a proposal ``q(z)`` and an unnormalized target ``p(x, z)`` the path

    pi_beta(z)  proportional to  q(z)^(1-beta) * p(x, z)^beta

is a one-parameter exponential family with natural parameter ``beta``,
base measure ``q`` and sufficient statistic ``T(z) = log p(x,z) - log q(z)``
(the log importance weight).  Every model here exposes the same three
path quantities:

* ``psi(beta)``   log normalizer; convex, with ``psi(0) = 0`` and
  ``psi(1) = log p(x)``,
* ``eta(beta)``   mean of ``T`` under ``pi_beta`` (= d psi / d beta),
* ``var(beta)``   variance of ``T`` under ``pi_beta`` (= d^2 psi / d beta^2,
  hence nonnegative and ``eta`` is nondecreasing).

``DiscreteLatentModel`` enumerates a finite latent space so the quantities
are exact sums; ``LinearGaussianModel`` keeps the path Gaussian in ``z`` so
they have closed forms.  Both are the ground truth against which sampled
estimates and bound identities are verified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "DiscreteLatentModel",
    "LinearGaussianModel",
    "GaussianPath",
    "MomentCurve",
    "exact_psi",
    "exact_eta",
    "exact_var",
    "gaussian_path_moments",
    "ti_identity_check",
    "load_model",
    "load_model_file",
]

_MAX_CONDITION = 1e12


def _check_beta(beta) -> np.ndarray:
    """Validate natural parameters: finite and nonnegative."""
    b = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("beta must be finite")
    if np.any(b < 0.0):
        raise ValueError("beta must be nonnegative")
    return b


def _scalar_like(value: np.ndarray, beta) -> float | np.ndarray:
    value = np.atleast_1d(np.asarray(value))
    if np.isscalar(beta) or np.ndim(beta) == 0:
        return float(value[0])
    return value


class DiscreteLatentModel:
    """Enumerable model over M latent states for one datapoint.

    Stores ``log q`` and ``log p(x, z)`` internally so that path quantities
    survive joint masses as small as exp(-700).
    """

    def __init__(self, q_probs, joint_mass):
        q = np.asarray(q_probs, dtype=float)
        p = np.asarray(joint_mass, dtype=float)
        if q.ndim != 1 or p.ndim != 1 or q.shape != p.shape:
            raise ValueError("q_probs and joint_mass must be equal-length vectors")
        if q.size < 2:
            raise ValueError("need at least 2 latent states")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("q_probs and joint_mass must be finite")
        if np.any(q <= 0.0) or np.any(p <= 0.0):
            raise ValueError("q_probs and joint_mass must be strictly positive")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ValueError("q_probs must sum to 1 within 1e-12")
        self.log_q = np.log(q)
        self.log_p = np.log(p)

    @property
    def n_states(self) -> int:
        return self.log_q.size

    @property
    def q_probs(self) -> np.ndarray:
        return np.exp(self.log_q)

    @property
    def joint_mass(self) -> np.ndarray:
        return np.exp(self.log_p)

    @property
    def log_weights(self) -> np.ndarray:
        """Per-state sufficient statistic T = log p(x,z) - log q(z)."""
        return self.log_p - self.log_q

    @property
    def log_px(self) -> float:
        return float(logsumexp(self.log_p))

    def path_log_probs(self, beta) -> np.ndarray:
        """log pi_beta over states; shape (M,) or (B, M) for vector beta."""
        b = _check_beta(beta)
        bb = np.atleast_1d(b)[:, None]
        unnorm = (1.0 - bb) * self.log_q[None, :] + bb * self.log_p[None, :]
        out = unnorm - logsumexp(unnorm, axis=1, keepdims=True)
        return out[0] if np.ndim(beta) == 0 else out

    def psi(self, beta):
        b = _check_beta(beta)
        bb = np.atleast_1d(b)[:, None]
        unnorm = (1.0 - bb) * self.log_q[None, :] + bb * self.log_p[None, :]
        return _scalar_like(logsumexp(unnorm, axis=1), beta)

    def eta(self, beta):
        probs = np.exp(np.atleast_2d(self.path_log_probs(beta)))
        return _scalar_like(probs @ self.log_weights, beta)

    def var(self, beta):
        probs = np.exp(np.atleast_2d(self.path_log_probs(beta)))
        t = self.log_weights
        centered = t[None, :] - (probs @ t)[:, None]
        return _scalar_like(np.sum(probs * centered * centered, axis=1), beta)

    def kl(self, beta_a: float, beta_b: float) -> float:
        """KL( pi_{beta_a} || pi_{beta_b} ) by direct enumeration."""
        la = self.path_log_probs(float(beta_a))
        lb = self.path_log_probs(float(beta_b))
        return float(np.exp(la) @ (la - lb))

    def to_json(self) -> dict:
        return {
            "type": "discrete",
            "q": self.q_probs.tolist(),
            "p": self.joint_mass.tolist(),
        }

    def __repr__(self) -> str:
        return f"DiscreteLatentModel(M={self.n_states})"


class LinearGaussianModel:
    """Linear-Gaussian generative model with a diagonal Gaussian encoder.

    Generative side: z ~ N(0, I), x | z ~ N(A z + b, sigma^2 I).
    Encoder for one datapoint: q(z | x) = N(m, diag(t^2)).

    The model is reparameterizable through z = m + t * eps with
    eps ~ N(0, I), which the gradient estimators rely on.
    """

    def __init__(self, decoder_weight, decoder_bias, obs_stddev, encoder_mean, encoder_stddev):
        A = np.atleast_2d(np.asarray(decoder_weight, dtype=float))
        b = np.asarray(decoder_bias, dtype=float).ravel()
        m = np.asarray(encoder_mean, dtype=float).ravel()
        t = np.asarray(encoder_stddev, dtype=float).ravel()
        sigma = float(obs_stddev)
        if A.shape[0] != b.size:
            raise ValueError("decoder_bias length must match decoder_weight rows")
        if A.shape[1] != m.size or m.size != t.size:
            raise ValueError("encoder_mean/encoder_stddev must match latent dimension")
        if sigma <= 0.0:
            raise ValueError("obs_stddev must be positive")
        if np.any(t <= 0.0):
            raise ValueError("encoder_stddev entries must be positive")
        for arr in (A, b, m, t):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")
        self.decoder_weight = A
        self.decoder_bias = b
        self.obs_stddev = sigma
        self.encoder_mean = m
        self.encoder_stddev = t

    @property
    def d_x(self) -> int:
        return self.decoder_weight.shape[0]

    @property
    def d_z(self) -> int:
        return self.decoder_weight.shape[1]

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Exact posterior mean and covariance of z given x."""
        x = np.asarray(x, dtype=float).ravel()
        A, s2 = self.decoder_weight, self.obs_stddev**2
        prec = np.eye(self.d_z) + A.T @ A / s2
        cov = np.linalg.inv(prec)
        mean = cov @ (A.T @ (x - self.decoder_bias) / s2)
        return mean, cov

    def log_q(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u = (z - self.encoder_mean) / self.encoder_stddev
        return (
            -0.5 * np.sum(u * u, axis=1)
            - np.sum(np.log(self.encoder_stddev))
            - 0.5 * self.d_z * np.log(2.0 * np.pi)
        )

    def log_joint(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = x - z @ self.decoder_weight.T - self.decoder_bias
        s2 = self.obs_stddev**2
        return (
            -0.5 * np.sum(z * z, axis=1)
            - 0.5 * self.d_z * np.log(2.0 * np.pi)
            - 0.5 * np.sum(r * r, axis=1) / s2
            - 0.5 * self.d_x * np.log(2.0 * np.pi * s2)
        )

    def log_weight(self, x, z) -> np.ndarray:
        return self.log_joint(x, z) - self.log_q(z)

    def at(self, x) -> "GaussianPath":
        return GaussianPath(self, x)

    def to_json(self) -> dict:
        return {
            "type": "linear_gaussian",
            "A": self.decoder_weight.tolist(),
            "b": self.decoder_bias.tolist(),
            "sigma": self.obs_stddev,
            "m": self.encoder_mean.tolist(),
            "t": self.encoder_stddev.tolist(),
        }

    def __repr__(self) -> str:
        return f"LinearGaussianModel(d_x={self.d_x}, d_z={self.d_z})"


class GaussianPath:
    """Closed-form path quantities for a LinearGaussianModel at one datapoint.

    Both log q and log p(x, .) are quadratics in z, so every pi_beta is
    Gaussian: with precision/linear/constant coefficients (P, h, c) for
    each endpoint, the beta-mixture has P_b = (1-beta) P_q + beta P_p etc.,
    and psi/eta/var reduce to Gaussian-moment algebra.
    """

    def __init__(self, model: LinearGaussianModel, x):
        self.model = model
        self.x = np.asarray(x, dtype=float).ravel()
        if self.x.size != model.d_x:
            raise ValueError("datapoint dimension must match decoder output")
        d_z, s2 = model.d_z, model.obs_stddev**2
        t2 = model.encoder_stddev**2
        A, b, m = model.decoder_weight, model.decoder_bias, model.encoder_mean

        self._prec_q = np.diag(1.0 / t2)
        self._h_q = m / t2
        self._c_q = (
            -0.5 * m @ (m / t2)
            - np.sum(np.log(model.encoder_stddev))
            - 0.5 * d_z * np.log(2.0 * np.pi)
        )
        r0 = self.x - b
        self._prec_p = np.eye(d_z) + A.T @ A / s2
        self._h_p = A.T @ r0 / s2
        self._c_p = (
            -0.5 * d_z * np.log(2.0 * np.pi)
            - 0.5 * r0 @ r0 / s2
            - 0.5 * model.d_x * np.log(2.0 * np.pi * s2)
        )
        # log-weight quadratic: log w(z) = -1/2 z' Mw z + hw' z + cw
        self._m_w = self._prec_p - self._prec_q
        self._h_w = self._h_p - self._h_q
        self._c_w = self._c_p - self._c_q

    def _coeffs(self, beta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = _check_beta(beta)
        if np.any(np.atleast_1d(b) > 1.0):
            raise ValueError("beta must lie in [0, 1] for the Gaussian path")
        bb = np.atleast_1d(b)[:, None, None]
        prec = (1.0 - bb) * self._prec_q[None] + bb * self._prec_p[None]
        cond = np.linalg.cond(prec)
        if np.any(~np.isfinite(cond)) or np.any(cond > _MAX_CONDITION):
            raise ValueError("path covariance is numerically degenerate")
        h = (1.0 - np.atleast_1d(b)[:, None]) * self._h_q[None] + np.atleast_1d(b)[:, None] * self._h_p[None]
        c = (1.0 - np.atleast_1d(b)) * self._c_q + np.atleast_1d(b) * self._c_p
        return prec, h, c

    def mean_cov(self, beta: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the Gaussian pi_beta."""
        prec, h, _ = self._coeffs(float(beta))
        cov = np.linalg.inv(prec[0])
        return cov @ h[0], cov

    def psi(self, beta):
        prec, h, c = self._coeffs(beta)
        sign, logdet = np.linalg.slogdet(prec)
        if np.any(sign <= 0):
            raise ValueError("path covariance is numerically degenerate")
        mu = np.linalg.solve(prec, h[..., None])[..., 0]
        d_z = self.model.d_z
        vals = c + 0.5 * np.sum(h * mu, axis=-1) + 0.5 * d_z * np.log(2.0 * np.pi) - 0.5 * logdet
        return _scalar_like(vals, beta)

    def eta(self, beta):
        prec, h, _ = self._coeffs(beta)
        cov = np.linalg.inv(prec)
        mu = np.einsum("bij,bj->bi", cov, h)
        mw, hw, cw = self._m_w, self._h_w, self._c_w
        tr = np.einsum("ij,bji->b", mw, cov)
        quad = np.einsum("bi,ij,bj->b", mu, mw, mu)
        vals = -0.5 * (tr + quad) + mu @ hw + cw
        return _scalar_like(vals, beta)

    def var(self, beta):
        prec, h, _ = self._coeffs(beta)
        cov = np.linalg.inv(prec)
        mu = np.einsum("bij,bj->bi", cov, h)
        g = self._h_w[None, :] - np.einsum("ij,bj->bi", self._m_w, mu)
        lin = np.einsum("bi,bij,bj->b", g, cov, g)
        ms = np.einsum("ij,bjk->bik", self._m_w, cov)
        quad = 0.5 * np.einsum("bij,bji->b", ms, ms)
        return _scalar_like(np.maximum(lin + quad, 0.0), beta)

    @property
    def log_px(self) -> float:
        """Exact marginal log-likelihood via the Gaussian marginal of x."""
        A, b, s2 = self.model.decoder_weight, self.model.decoder_bias, self.model.obs_stddev**2
        cov = s2 * np.eye(self.model.d_x) + A @ A.T
        r = self.x - b
        _, logdet = np.linalg.slogdet(cov)
        quad = r @ np.linalg.solve(cov, r)
        return float(-0.5 * (self.model.d_x * np.log(2.0 * np.pi) + logdet + quad))

    def kl(self, beta_a: float, beta_b: float) -> float:
        """KL( pi_{beta_a} || pi_{beta_b} ) between the path Gaussians."""
        mu_a, cov_a = self.mean_cov(beta_a)
        mu_b, cov_b = self.mean_cov(beta_b)
        d = mu_a.size
        prec_b = np.linalg.inv(cov_b)
        diff = mu_b - mu_a
        _, ld_a = np.linalg.slogdet(cov_a)
        _, ld_b = np.linalg.slogdet(cov_b)
        val = 0.5 * (np.trace(prec_b @ cov_a) + diff @ prec_b @ diff - d + ld_b - ld_a)
        return float(max(val, 0.0))

    def __repr__(self) -> str:
        return f"GaussianPath(d_x={self.model.d_x}, d_z={self.model.d_z})"


@dataclass(frozen=True)
class MomentCurve:
    """Tabulated (beta, psi, eta, var) along the path.

    Betas must be strictly increasing, eta nondecreasing (convexity of
    the log normalizer) and var nonnegative.
    """

    betas: np.ndarray
    psis: np.ndarray
    etas: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        for name in ("betas", "psis", "etas", "vars"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.betas.size
        if not (self.psis.size == n and self.etas.size == n and self.vars.size == n):
            raise ValueError("curve columns must have equal length")
        if np.any(np.diff(self.betas) <= 0.0):
            raise ValueError("betas must be strictly increasing")
        if np.any(np.diff(self.etas) < -1e-10):
            raise ValueError("eta must be nondecreasing along the path")
        if np.any(self.vars < -1e-15):
            raise ValueError("var must be nonnegative")

    @classmethod
    def from_path(cls, path, betas) -> "MomentCurve":
        betas = np.asarray(betas, dtype=float)
        return cls(betas, path.psi(betas), path.eta(betas), path.var(betas))

    def __len__(self) -> int:
        return self.betas.size


def exact_psi(model: DiscreteLatentModel, beta):
    """Log normalizer of the geometric mixture, by log-space enumeration."""
    return model.psi(beta)


def exact_eta(model: DiscreteLatentModel, beta):
    """Expected log weight under pi_beta (derivative of the log normalizer)."""
    return model.eta(beta)


def exact_var(model: DiscreteLatentModel, beta):
    """Variance of the log weight under pi_beta (second derivative)."""
    return model.var(beta)


def gaussian_path_moments(model: LinearGaussianModel, x, beta) -> tuple[float, float, float]:
    """Closed-form (psi, eta, var) of the Gaussian path at one beta."""
    path = model.at(x)
    return path.psi(beta), path.eta(beta), path.var(beta)


def ti_identity_check(curve: MomentCurve) -> float:
    """Residual of the path integral identity on a tabulated curve.

    Integrates eta over [0, 1] with composite Simpson quadrature and
    compares with psi(1) - psi(0); the residual vanishes as the grid
    refines because eta is the derivative of psi.
    """
    from scipy.integrate import simpson

    if len(curve) < 101:
        raise ValueError("curve must have at least 101 points")
    if abs(curve.betas[0]) > 1e-12 or abs(curve.betas[-1] - 1.0) > 1e-12:
        raise ValueError("curve must span [0, 1]")
    integral = simpson(curve.etas, x=curve.betas)
    return float(abs(integral - (curve.psis[-1] - curve.psis[0])))


def load_model(doc: dict):
    """Build a model from its JSON document.

    Returns ``(model, x)`` where ``x`` is the optional datapoint attached to
    a linear-Gaussian document (``None`` for discrete models or when absent).
    """
    kind = doc.get("type")
    if kind == "discrete":
        return DiscreteLatentModel(doc["q"], doc["p"]), None
    if kind == "linear_gaussian":
        model = LinearGaussianModel(doc["A"], doc["b"], doc["sigma"], doc["m"], doc["t"])
        x = np.asarray(doc["x"], dtype=float) if "x" in doc else None
        return model, x
    raise ValueError(f"unknown model type: {kind!r}")


def load_model_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return load_model(json.load(fh))
