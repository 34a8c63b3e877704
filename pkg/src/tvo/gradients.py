"""Gradient estimators for path expectations under the linear-Gaussian model.

Two estimators for d/dparams E_{pi_beta}[f(z)] with f(z) = log w as the
integrand of interest:

* a score-function form valid for any parameter block,

      E[df/dparams] + Cov[f, d log(q^(1-beta) p^beta)/dparams],

  used for the generative parameters, and

* a doubly reparameterized form for the encoder parameters, which pushes
  the sampling dependence through z = m + t * eps and, for f = log w,
  collapses to

      (1 - 2 beta) E[(dz/dphi)(dlogw/dz)]
      + beta (1 - beta) Cov[log w, (dz/dphi)(dlogw/dz)].

The covariance coefficient beta * (1 - beta) vanishes identically at both
endpoints, where the estimator reduces to the pathwise bound gradient
(beta = 0) and its negation (beta = 1).

Expectations are taken with self-normalized weights proportional to
base_weight * w^beta, so the same code path serves Monte Carlo draws
(uniform base weights) and Gauss-Hermite quadrature (deterministic,
used by the finite-difference validation suite).

Parameter packing convention: theta = [decoder_weight.ravel(),
decoder_bias, log obs_stddev] and phi = [encoder_mean, log encoder_stddev];
standard deviations live in log space so every real step stays valid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bounds import tvo_lower as _tvo_lower_sum
from .models import GaussianPath, LinearGaussianModel
from .schedules import Schedule

__all__ = [
    "ParamVector",
    "GradEstimate",
    "LemmaReport",
    "covariance_coefficient",
    "gauss_hermite_eps",
    "pack_params",
    "unpack_params",
    "reinforce_grad",
    "doubly_reparam_grad",
    "generic_reparam_grad",
    "lemma_checks",
    "finite_diff_grad",
    "tvo_lower_gradient",
]


@dataclass(frozen=True)
class ParamVector:
    """Flat generative (theta) and inference (phi) parameter vectors."""

    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).ravel())
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).ravel())
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.phi))):
            raise ValueError("parameter vectors must be finite")


@dataclass(frozen=True)
class GradEstimate:
    """Gradient estimate with shapes matching a ParamVector.

    Estimators that only produce an encoder gradient fill d_theta with
    zeros; the tag records which estimator produced the values.
    """

    d_theta: np.ndarray
    d_phi: np.ndarray
    estimator_tag: str

    def __post_init__(self):
        object.__setattr__(self, "d_theta", np.asarray(self.d_theta, dtype=float).ravel())
        object.__setattr__(self, "d_phi", np.asarray(self.d_phi, dtype=float).ravel())
        if self.estimator_tag not in ("reinforce", "doubly_reparam", "finite_diff"):
            raise ValueError(f"unknown estimator tag {self.estimator_tag!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "d_theta": self.d_theta.tolist(),
                "d_phi": self.d_phi.tolist(),
                "estimator_tag": self.estimator_tag,
            },
            sort_keys=True,
        )


def covariance_coefficient(beta: float) -> float:
    """Coefficient beta * (1 - beta) of the covariance correction term."""
    beta = float(beta)
    return beta * (1.0 - beta)


def pack_params(model: LinearGaussianModel) -> ParamVector:
    theta = np.concatenate(
        [model.decoder_weight.ravel(), model.decoder_bias, [np.log(model.obs_stddev)]]
    )
    phi = np.concatenate([model.encoder_mean, np.log(model.encoder_stddev)])
    return ParamVector(theta, phi)


def unpack_params(params: ParamVector, d_x: int, d_z: int) -> LinearGaussianModel:
    theta, phi = params.theta, params.phi
    n_w = d_x * d_z
    return LinearGaussianModel(
        decoder_weight=theta[:n_w].reshape(d_x, d_z),
        decoder_bias=theta[n_w : n_w + d_x],
        obs_stddev=np.exp(theta[n_w + d_x]),
        encoder_mean=phi[:d_z],
        encoder_stddev=np.exp(phi[d_z:]),
    )


def gauss_hermite_eps(d_z: int, order: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product Gauss-Hermite nodes and weights for eps ~ N(0, I)."""
    nodes, weights = np.polynomial.hermite.hermgauss(int(order))
    nodes = nodes * np.sqrt(2.0)
    weights = weights / np.sqrt(np.pi)
    grids = np.meshgrid(*([nodes] * d_z), indexing="ij")
    eps = np.stack([g.ravel() for g in grids], axis=1)
    w = np.ones(eps.shape[0])
    for axis, g in enumerate(np.meshgrid(*([weights] * d_z), indexing="ij")):
        w = w * g.ravel()
    return eps, w / w.sum()


def _ensemble(model: LinearGaussianModel, eps, weights):
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if eps.shape[1] != model.d_z:
        raise ValueError("eps must have one column per latent dimension")
    if weights is None:
        base = np.full(eps.shape[0], 1.0 / eps.shape[0])
    else:
        base = np.asarray(weights, dtype=float)
        base = base / base.sum()
    return eps, base


def _snis_weights(base: np.ndarray, log_w: np.ndarray, beta: float) -> np.ndarray:
    scaled = beta * log_w
    w = base * np.exp(scaled - scaled.max())
    return w / w.sum()


def _weighted_cov(omega: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cov under omega of scalar a against the columns of b, shared weights."""
    mean_a = omega @ a
    mean_b = omega @ b
    return omega @ (a[:, None] * b) - mean_a * mean_b


class _SampleSet:
    """Per-sample quantities shared by the estimators."""

    def __init__(self, model: LinearGaussianModel, x, eps, weights=None):
        self.model = model
        self.x = np.asarray(x, dtype=float).ravel()
        self.eps, self.base = _ensemble(model, eps, weights)
        self.z = model.encoder_mean + model.encoder_stddev * self.eps
        self.log_w = model.log_weight(self.x, self.z)
        r = self.x - self.z @ model.decoder_weight.T - model.decoder_bias
        s2 = model.obs_stddev**2
        self.dlogp_dz = -self.z + (r @ model.decoder_weight) / s2
        zc = (self.z - model.encoder_mean) / model.encoder_stddev**2
        self.dlogq_dz = -zc
        self.dlogw_dz = self.dlogp_dz - self.dlogq_dz
        # theta partials at fixed z, packed [A, b, log sigma]
        d_a = (r[:, :, None] * self.z[:, None, :] / s2).reshape(self.z.shape[0], -1)
        d_b = r / s2
        d_ls = (-model.d_x + np.sum(r * r, axis=1) / s2)[:, None]
        self.dlogp_dtheta = np.concatenate([d_a, d_b, d_ls], axis=1)
        # phi score partials at fixed z, packed [m, log t]
        d_m = zc
        d_lt = -1.0 + ((self.z - model.encoder_mean) / model.encoder_stddev) ** 2
        self.dlogq_dphi = np.concatenate([d_m, d_lt], axis=1)

    def omega(self, beta: float) -> np.ndarray:
        return _snis_weights(self.base, self.log_w, beta)

    def path_term(self, g: np.ndarray) -> np.ndarray:
        """(dz/dphi) contracted with a z-gradient g, packed [m, log t]."""
        return np.concatenate([g, g * (self.z - self.model.encoder_mean)], axis=1)

    def dlogw_dphi_total(self) -> np.ndarray:
        """Total derivative of log w at fixed eps (explicit + path terms)."""
        return -self.dlogq_dphi + self.path_term(self.dlogw_dz)


def _check_beta_unit(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return beta


def reinforce_grad(model: LinearGaussianModel, x, beta: float, eps, weights=None) -> GradEstimate:
    """Score-function estimate of d/dparams E_{pi_beta}[log w].

    theta block: E[dlogp/dtheta] + beta * Cov[log w, dlogp/dtheta].
    phi block:   E[-dlogq/dphi] + (1 - beta) * Cov[log w, dlogq/dphi].
    Needs at least two atoms for the covariance.
    """
    beta = _check_beta_unit(beta)
    s = _SampleSet(model, x, eps, weights)
    if s.z.shape[0] < 2:
        raise ValueError("need at least 2 samples for a covariance estimate")
    omega = s.omega(beta)
    d_theta = omega @ s.dlogp_dtheta + beta * _weighted_cov(omega, s.log_w, s.dlogp_dtheta)
    d_phi = omega @ (-s.dlogq_dphi) + (1.0 - beta) * _weighted_cov(omega, s.log_w, s.dlogq_dphi)
    return GradEstimate(d_theta, d_phi, "reinforce")


def doubly_reparam_grad(model: LinearGaussianModel, x, beta: float, eps, weights=None) -> GradEstimate:
    """Doubly reparameterized estimate of d/dphi E_{pi_beta}[log w].

    (1 - 2 beta) E[(dz/dphi)(dlogw/dz)] plus the covariance term with
    coefficient beta (1 - beta), which is exactly zero at both endpoints.
    Encoder gradient only; the theta block is left at zero.
    """
    beta = _check_beta_unit(beta)
    s = _SampleSet(model, x, eps, weights)
    omega = s.omega(beta)
    path = s.path_term(s.dlogw_dz)
    coeff = covariance_coefficient(beta)
    d_phi = (1.0 - 2.0 * beta) * (omega @ path)
    if coeff != 0.0:
        d_phi = d_phi + coeff * _weighted_cov(omega, s.log_w, path)
    return GradEstimate(np.zeros_like(pack_params(model).theta), d_phi, "doubly_reparam")


_F_SPECS = ("log_w", "log_w_sq")


def _f_quantities(s: _SampleSet, f_spec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (f, df/dz, total df/dphi) for the closed test-function set."""
    if f_spec == "log_w":
        return s.log_w, s.dlogw_dz, s.dlogw_dphi_total()
    if f_spec == "log_w_sq":
        return (
            s.log_w**2,
            2.0 * s.log_w[:, None] * s.dlogw_dz,
            2.0 * s.log_w[:, None] * s.dlogw_dphi_total(),
        )
    if isinstance(f_spec, str) and f_spec.startswith("z"):
        try:
            j = int(f_spec[1:])
        except ValueError:
            raise ValueError(f"unknown f_spec {f_spec!r}") from None
        if not 0 <= j < s.model.d_z:
            raise ValueError(f"coordinate {f_spec!r} out of range")
        g = np.zeros_like(s.z)
        g[:, j] = 1.0
        return s.z[:, j], g, s.path_term(g)
    if f_spec == "const":
        zeros = np.zeros_like(s.z)
        return np.ones(s.z.shape[0]), zeros, s.path_term(zeros)
    raise ValueError(f"unknown f_spec {f_spec!r}; expected one of {_F_SPECS + ('const', 'z<j>')}")


def generic_reparam_grad(model: LinearGaussianModel, x, beta: float, f_spec, eps, weights=None) -> GradEstimate:
    """Reparameterized d/dphi E_{pi_beta}[f(z)] for the analytic test set.

    E[df/dphi - beta (dz/dphi)(df/dz)]
    + beta (1 - beta) Cov[f, (dz/dphi)(dlogw/dz)].

    f_spec is one of 'log_w', 'log_w_sq', 'z<j>' (a latent coordinate) or
    'const'.
    """
    beta = _check_beta_unit(beta)
    s = _SampleSet(model, x, eps, weights)
    f, df_dz, df_dphi = _f_quantities(s, f_spec)
    omega = s.omega(beta)
    first = omega @ (df_dphi - beta * s.path_term(df_dz))
    coeff = covariance_coefficient(beta)
    d_phi = first
    if coeff != 0.0:
        d_phi = d_phi + coeff * _weighted_cov(omega, f, s.path_term(s.dlogw_dz))
    return GradEstimate(np.zeros_like(pack_params(model).theta), d_phi, "doubly_reparam")


@dataclass(frozen=True)
class LemmaReport:
    """Max-abs residuals of the reparameterization identities."""

    lemma1: float
    corollary1: float
    lemma2: float

    def max_residual(self) -> float:
        return max(self.lemma1, self.corollary1, self.lemma2)


def _fd_dlogw_dphi(model: LinearGaussianModel, x, eps: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """d log w / d phi at fixed eps by central differences, per sample."""
    params = pack_params(model)
    x = np.asarray(x, dtype=float).ravel()
    out = np.empty((eps.shape[0], params.phi.size))
    for i in range(params.phi.size):
        h = step * max(1.0, abs(params.phi[i]))
        for sign, col in ((1.0, 0), (-1.0, 1)):
            phi = params.phi.copy()
            phi[i] += sign * h
            pert = unpack_params(ParamVector(params.theta, phi), model.d_x, model.d_z)
            z = pert.encoder_mean + pert.encoder_stddev * eps
            vals = pert.log_weight(x, z)
            if col == 0:
                plus = vals
            else:
                minus = vals
        out[:, i] = (plus - minus) / (2.0 * h)
    return out


def lemma_checks(model: LinearGaussianModel, x, beta: float, order: int = 128) -> LemmaReport:
    """Quadrature residuals of the three reparameterization identities.

    Left sides containing d/dphi are finite-differenced at fixed eps; right
    sides are Gauss-Hermite expectations of the analytic forms.  Requires a
    one-dimensional latent space.
    """
    if model.d_z != 1:
        raise ValueError("lemma checks require a 1-d latent space")
    beta = _check_beta_unit(beta)
    eps, base = gauss_hermite_eps(model.d_z, order)
    s = _SampleSet(model, x, eps, base)
    omega = s.omega(beta)
    fd = _fd_dlogw_dphi(model, x, eps)
    path = s.path_term(s.dlogw_dz)

    # identity for E[f * dlogw/dphi] with f = log w
    lhs1 = omega @ (s.log_w[:, None] * fd)
    g1 = (1.0 - beta) * s.log_w[:, None] * s.dlogw_dz - s.dlogw_dz
    rhs1 = omega @ s.path_term(g1)
    res1 = float(np.max(np.abs(lhs1 - rhs1)))

    # f = 1 specialization
    lhs2 = omega @ fd
    rhs2 = (1.0 - beta) * (omega @ path)
    res2 = float(np.max(np.abs(lhs2 - rhs2)))

    # derivative of the normalizer Z_beta itself
    params = pack_params(model)
    x_arr = np.asarray(x, dtype=float).ravel()
    lhs3 = np.empty(params.phi.size)
    for i in range(params.phi.size):
        h = 1e-6 * max(1.0, abs(params.phi[i]))
        vals = []
        for sign in (1.0, -1.0):
            phi = params.phi.copy()
            phi[i] += sign * h
            pert = unpack_params(ParamVector(params.theta, phi), model.d_x, model.d_z)
            vals.append(np.exp(GaussianPath(pert, x_arr).psi(beta)))
        lhs3[i] = (vals[0] - vals[1]) / (2.0 * h)
    shift = s.log_w.max()
    w_beta = np.exp(beta * (s.log_w - shift))
    rhs3 = covariance_coefficient(beta) * np.exp(beta * shift) * ((s.base * w_beta) @ path)
    res3 = float(np.max(np.abs(lhs3 - rhs3)))
    return LemmaReport(lemma1=res1, corollary1=res2, lemma2=res3)


_FD_TARGETS = ("eta", "psi", "tvo_lower")


def finite_diff_grad(
    model: LinearGaussianModel,
    x,
    beta: float,
    target: str = "eta",
    schedule: Schedule | None = None,
) -> GradEstimate:
    """Central-difference gradient of a closed-form target.

    target is 'eta' or 'psi' (evaluated at beta) or 'tvo_lower' (the left
    Riemann sum over the given schedule, default the single interval
    {0, 1}).  Step per coordinate is 1e-5 * max(1, |param|).
    """
    if target not in _FD_TARGETS:
        raise ValueError(f"unknown target {target!r}; expected one of {_FD_TARGETS}")
    beta = _check_beta_unit(beta)
    if schedule is None:
        schedule = Schedule((0.0, 1.0))
    betas = schedule.as_array()
    x = np.asarray(x, dtype=float).ravel()

    def objective(m: LinearGaussianModel) -> float:
        path = GaussianPath(m, x)
        if target == "eta":
            return float(path.eta(beta))
        if target == "psi":
            return float(path.psi(beta))
        return _tvo_lower_sum(path.eta(betas), betas)

    params = pack_params(model)
    packed = np.concatenate([params.theta, params.phi])
    n_theta = params.theta.size
    grad = np.empty(packed.size)
    for i in range(packed.size):
        h = 1e-5 * max(1.0, abs(packed[i]))
        vals = []
        for sign in (1.0, -1.0):
            p = packed.copy()
            p[i] += sign * h
            pert = unpack_params(ParamVector(p[:n_theta], p[n_theta:]), model.d_x, model.d_z)
            vals.append(objective(pert))
        grad[i] = (vals[0] - vals[1]) / (2.0 * h)
    return GradEstimate(grad[:n_theta], grad[n_theta:], "finite_diff")


def tvo_lower_gradient(model: LinearGaussianModel, x, schedule: Schedule, eps, weights=None) -> GradEstimate:
    """Gradient estimate of the left Riemann sum over a schedule.

    theta uses the score-function estimator and phi the doubly
    reparameterized one, each evaluated at the left endpoint of every
    interval and combined with the interval widths.
    """
    betas = schedule.as_array()
    widths = np.diff(betas)
    d_theta = None
    d_phi = None
    for width, beta in zip(widths, betas[:-1]):
        g_theta = reinforce_grad(model, x, beta, eps, weights)
        g_phi = doubly_reparam_grad(model, x, beta, eps, weights)
        if d_theta is None:
            d_theta = width * g_theta.d_theta
            d_phi = width * g_phi.d_phi
        else:
            d_theta = d_theta + width * g_theta.d_theta
            d_phi = d_phi + width * g_phi.d_phi
    return GradEstimate(d_theta, d_phi, "reinforce")
