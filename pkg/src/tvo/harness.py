"""Experiment harness: identity verification, schedule studies, and
desk-scale training of the linear-Gaussian model on synthetic data.

Training performs plain SGD ascent on the left Riemann bound.  Generative
parameters are shared across the batch and stepped with the batch-mean
score-function gradient; encoder parameters are local (one mean/stddev pair
per datapoint) and each is stepped with its own doubly reparameterized
gradient.  The per-epoch log stores exact closed-form bounds, so the
sandwich invariant is checked on every row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import battery, bounds, gradients, models, schedules, snis

__all__ = [
    "ExperimentConfig",
    "TrainRow",
    "TrainLog",
    "TrainingDiverged",
    "run_verify",
    "run_schedule_study",
    "train",
    "emit_integrand",
    "write_csv",
]

_OBJECTIVES = ("tvo", "iwae", "elbo")
_STRATEGIES = ("linear", "log_uniform", "moments", "coarse_grained")
STUDY_K_VALUES = (2, 5, 10, 30, 50)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Deterministic CSV writer: 17 significant digits, '.' decimal."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt(cell) for cell in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class ExperimentConfig:
    model_spec: str | None = None
    objective: str = "tvo"
    schedule_strategy: str = "moments"
    K: int = 2
    S: int = 100
    beta1: float | None = None
    J: int = 20
    epochs: int = 500
    learning_rate: float = 1e-2
    seed: int = 0
    refresh_every: int = 1
    output_dir: str = "out"

    def __post_init__(self):
        if self.objective not in _OBJECTIVES:
            raise ValueError(f"objective must be one of {_OBJECTIVES}")
        if self.schedule_strategy not in _STRATEGIES:
            raise ValueError(f"schedule_strategy must be one of {_STRATEGIES}")
        if self.K < 1 or self.S < 1 or self.epochs < 1:
            raise ValueError("K, S, and epochs must be at least 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be at least 1")
        if self.schedule_strategy == "log_uniform" and self.beta1 is None:
            raise ValueError("beta1 is required for log_uniform scheduling")

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        return cls(**doc)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


def _verify_battery(seed: int):
    rng = np.random.default_rng(seed)
    paths = [
        ("two_state", battery.two_state_reference()),
        ("flat", battery.flat_discrete()),
        ("sharp", battery.sharp_discrete()),
    ]
    for i in range(6):
        paths.append((f"discrete_{i}", battery.random_discrete(rng, max_states=10)))
    model, x = battery.equal_cov_mean_mismatch()
    paths.append(("equal_cov", model.at(x)))
    for i, d_z in enumerate((1, 2)):
        model, x = battery.random_gaussian(rng, d_z=d_z, d_x=2)
        paths.append((f"gaussian_{d_z}d_{i}", model.at(x)))
    return paths, rng


def _is_gaussian(path) -> bool:
    return isinstance(path, models.GaussianPath)


def _identity_checks(name: str, path, rng: np.random.Generator, eta_corruption: float = 0.0):
    checks = []
    tol_exact = 1e-8 if _is_gaussian(path) else 1e-10
    grid = np.linspace(0.0, 1.0, 1001)
    curve_etas = np.atleast_1d(path.eta(grid)).copy()
    if eta_corruption:
        curve_etas[500] += eta_corruption
    from scipy.integrate import simpson

    ti_res = abs(simpson(curve_etas, x=grid) - (path.psi(1.0) - path.psi(0.0)))
    checks.append(CheckResult(f"{name}:ti_integral", float(ti_res), 1e-8))

    probes = np.linspace(0.05, 0.95, 7)
    h = 1e-4
    eta_res = max(
        abs(path.eta(b) - (path.psi(b + h) - path.psi(b - h)) / (2 * h)) for b in probes
    )
    var_res = max(
        abs(path.var(b) - (path.psi(b + h) - 2 * path.psi(b) + path.psi(b - h)) / h**2)
        for b in probes
    )
    checks.append(CheckResult(f"{name}:eta_matches_dpsi", float(eta_res), 1e-6))
    checks.append(CheckResult(f"{name}:var_matches_d2psi", float(var_res), 1e-4))

    schedule = battery.random_schedule(rng, max_k=12)
    gap_lo, kl_fwd = bounds.gap_decomposition_lower(path, schedule)
    gap_up, kl_rev = bounds.gap_decomposition_upper(path, schedule)
    checks.append(CheckResult(f"{name}:gap_forward", float(abs(gap_lo - kl_fwd.sum())), 1e-9))
    checks.append(CheckResult(f"{name}:gap_reverse", float(abs(gap_up - kl_rev.sum())), 1e-9))
    checks.append(
        CheckResult(f"{name}:sandwich", float(max(-gap_lo, -gap_up, 0.0)), 1e-12)
    )
    refined = schedule.with_point(float(rng.uniform(0.05, 0.95)))
    gap_lo2, _ = bounds.gap_decomposition_lower(path, refined)
    gap_up2, _ = bounds.gap_decomposition_upper(path, refined)
    checks.append(
        CheckResult(
            f"{name}:refinement",
            float(max(gap_lo2 - gap_lo, gap_up2 - gap_up, 0.0)),
            1e-12,
        )
    )

    pairs = [(0.0, 0.5), (0.25, 0.75), (1.0, 0.5), (0.0, 1.0)]
    dual_res = max(bounds.dual_divergence_check(path, a, b) for a, b in pairs)
    conj_res = max(
        abs(bounds.conjugate_psi_star(path, b) - path.kl(b, 0.0)) for b in (0.0, 0.25, 0.5, 1.0)
    )
    rect_res = max(abs(l - r) for l, r in (bounds.symm_kl_rectangle(path, a, b) for a, b in pairs))
    checks.append(CheckResult(f"{name}:dual_divergence", float(dual_res), tol_exact))
    checks.append(CheckResult(f"{name}:conjugate_kl", float(conj_res), tol_exact))
    checks.append(CheckResult(f"{name}:symm_rectangle", float(rect_res), tol_exact))

    renyi_res = max(
        abs(b * bounds.renyi_objective(path, b) - path.psi(b)) for b in (0.25, 0.5, 0.75, 1.0)
    )
    renyi_res = max(renyi_res, abs(bounds.renyi_objective(path, 1.0) - path.log_px))
    checks.append(CheckResult(f"{name}:renyi", float(renyi_res), tol_exact))

    kvf = abs(bounds.kl_variance_integral(path, 0.0, 0.5, "forward") - path.kl(0.0, 0.5))
    kvr = abs(bounds.kl_variance_integral(path, 0.0, 0.5, "reverse") - path.kl(0.5, 0.0))
    checks.append(CheckResult(f"{name}:kl_var_forward", float(kvf), 1e-6))
    checks.append(CheckResult(f"{name}:kl_var_reverse", float(kvr), 1e-6))

    symm = path.kl(0.0, 1.0) + path.kl(1.0, 0.0)
    rate = bounds.asymptotic_rate_check(path, [128])[0][1]
    if symm > 1e-12:
        checks.append(CheckResult(f"{name}:rate_limit", float(abs(rate / (0.5 * symm) - 1.0)), 0.02))
    else:
        checks.append(CheckResult(f"{name}:rate_limit", float(abs(rate)), 1e-10))

    span = path.eta(1.0) - path.eta(0.0)
    tol_eta = max(1e-3 * span, 1e-12)
    sched = schedules.moments_schedule(schedules.EtaEvaluator.from_path(path), 4, tol=tol_eta)
    images = np.atleast_1d(path.eta(sched.as_array()))
    spacing_res = float(np.max(np.abs(np.diff(images) - span / 4)))
    checks.append(CheckResult(f"{name}:moments_spacing", spacing_res, 2 * tol_eta))
    return checks


def _gradient_checks(rng: np.random.Generator):
    checks = []
    for i in range(2):
        model, x = battery.random_gaussian_1d(rng, d_x=2)
        eps, w = gradients.gauss_hermite_eps(1, 128)
        name = f"grad:gaussian_{i}"
        reinf_res = 0.0
        reparam_res = 0.0
        lemma_res = 0.0
        for beta in (0.1, 0.5, 0.9):
            ref = gradients.finite_diff_grad(model, x, beta, target="eta")
            est = gradients.reinforce_grad(model, x, beta, eps, w)
            reinf_res = max(
                reinf_res,
                float(np.max(np.abs(est.d_theta - ref.d_theta))),
                float(np.max(np.abs(est.d_phi - ref.d_phi))),
            )
            rep = gradients.doubly_reparam_grad(model, x, beta, eps, w)
            reparam_res = max(reparam_res, float(np.max(np.abs(rep.d_phi - ref.d_phi))))
            lemma_res = max(lemma_res, gradients.lemma_checks(model, x, beta).max_residual())
        checks.append(CheckResult(f"{name}:reinforce_vs_fd", reinf_res, 1e-5))
        checks.append(CheckResult(f"{name}:reparam_vs_fd", reparam_res, 1e-5))
        checks.append(CheckResult(f"{name}:lemmas", lemma_res, 1e-5))
    coeff_res = abs(gradients.covariance_coefficient(0.0)) + abs(gradients.covariance_coefficient(1.0))
    checks.append(CheckResult("grad:endpoint_coefficient", float(coeff_res), 0.0))
    return checks


def run_verify(config: ExperimentConfig, _eta_corruption: float = 0.0) -> dict:
    """Run every identity over the seeded battery; report residuals.

    The private _eta_corruption knob perturbs one entry of the tabulated
    integrand on the first battery model, as a negative control for tests.
    """
    paths, rng = _verify_battery(config.seed)
    if config.model_spec is not None:
        model, x = models.load_model_file(config.model_spec)
        if isinstance(model, models.LinearGaussianModel):
            if x is None:
                raise ValueError("linear_gaussian model spec needs an 'x' entry for verification")
            paths.append(("user_model", model.at(x)))
        else:
            paths.append(("user_model", model))
    checks: list[CheckResult] = []
    for i, (name, path) in enumerate(paths):
        corruption = _eta_corruption if i == 0 else 0.0
        checks.extend(_identity_checks(name, path, rng, eta_corruption=corruption))
    checks.extend(_gradient_checks(rng))
    return {
        "checks": [
            {
                "name": c.name,
                "residual": c.residual,
                "tolerance": c.tolerance,
                "passed": c.passed,
            }
            for c in checks
        ],
        "passed": all(c.passed for c in checks),
        "seed": config.seed,
    }


# ---------------------------------------------------------------------------
# schedule study
# ---------------------------------------------------------------------------


def _load_exact_path(config: ExperimentConfig):
    if config.model_spec is None:
        raise ValueError("an exact model spec is required")
    model, x = models.load_model_file(config.model_spec)
    if isinstance(model, models.DiscreteLatentModel):
        return model
    if x is None:
        raise ValueError("linear_gaussian model spec needs an 'x' entry")
    return model.at(x)


def _build_schedule(strategy: str, evaluator, K: int, beta1: float | None, J: int) -> schedules.Schedule:
    if strategy == "linear":
        return schedules.linear_schedule(K)
    if strategy == "log_uniform":
        if K < 2:
            return schedules.linear_schedule(K)
        return schedules.log_uniform_schedule(K, 0.025 if beta1 is None else beta1)
    if strategy == "moments":
        return schedules.moments_schedule(evaluator, K)
    if strategy == "coarse_grained":
        return schedules.coarse_grained_schedule(evaluator, K, J=min(J, K))
    raise ValueError(f"unknown strategy {strategy!r}")


def run_schedule_study(config: ExperimentConfig, k_values=STUDY_K_VALUES) -> list[dict]:
    """Gap comparison of all four strategies on an exact model."""
    path = _load_exact_path(config)
    evaluator = schedules.EtaEvaluator.from_path(path)
    rows = []
    for strategy in _STRATEGIES:
        for K in k_values:
            sched = _build_schedule(strategy, evaluator, K, config.beta1, config.J)
            gap_lo, _ = bounds.gap_decomposition_lower(path, sched)
            gap_up, _ = bounds.gap_decomposition_upper(path, sched)
            rows.append(
                {
                    "strategy": strategy,
                    "K": K,
                    "gap_lower": gap_lo,
                    "gap_upper": gap_up,
                }
            )
    return rows


def write_study_csv(rows: list[dict], path) -> None:
    write_csv(
        path,
        ["strategy", "K", "gap_lower", "gap_upper"],
        [[r["strategy"], str(r["K"]), r["gap_lower"], r["gap_upper"]] for r in rows],
    )


# ---------------------------------------------------------------------------
# integrand table
# ---------------------------------------------------------------------------


def emit_integrand(config: ExperimentConfig, grid: snis.LogWeightGrid | None = None) -> list[tuple]:
    """201-row (beta, eta, var) table from an exact model or a weight grid."""
    betas = np.linspace(0.0, 1.0, 201)
    if grid is not None:
        rows = [
            (b, float(np.mean(snis.snis_eta(grid, b))), float(np.mean(snis.snis_var(grid, b))))
            for b in betas
        ]
    else:
        path = _load_exact_path(config)
        etas = np.atleast_1d(path.eta(betas))
        variances = np.atleast_1d(path.var(betas))
        rows = list(zip(betas.tolist(), etas.tolist(), variances.tolist()))
    return rows


def write_integrand_csv(rows: list[tuple], path) -> None:
    write_csv(path, ["beta", "eta", "var"], [list(r) for r in rows])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"objective became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainRow:
    epoch: int
    tvo_lower: float
    tvo_upper: float
    elbo: float
    eubo: float
    log_px: float
    grad_norm_theta: float
    grad_norm_phi: float
    schedule: tuple


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    initial_kl: float = float("nan")
    final_kl: float = float("nan")

    def append(self, row: TrainRow) -> None:
        if not (row.tvo_lower <= row.log_px + 1e-9 and row.log_px <= row.tvo_upper + 1e-9):
            raise AssertionError(
                f"sandwich violated at epoch {row.epoch}: "
                f"{row.tvo_lower} / {row.log_px} / {row.tvo_upper}"
            )
        self.rows.append(row)

    def schedule_history(self) -> list[tuple]:
        return [r.schedule for r in self.rows]

    def quartile_medians(self) -> list[float]:
        """Median schedule point per training quartile."""
        per_epoch = [float(np.median(r.schedule)) for r in self.rows]
        return [float(np.median(chunk)) for chunk in np.array_split(np.asarray(per_epoch), 4)]

    def write_csv(self, path) -> None:
        header = [
            "epoch",
            "tvo_lower",
            "tvo_upper",
            "elbo",
            "eubo",
            "log_px",
            "grad_norm_theta",
            "grad_norm_phi",
            "schedule",
        ]
        rows = [
            [
                str(r.epoch),
                r.tvo_lower,
                r.tvo_upper,
                r.elbo,
                r.eubo,
                r.log_px,
                r.grad_norm_theta,
                r.grad_norm_phi,
                ";".join(_fmt(b) for b in r.schedule),
            ]
            for r in self.rows
        ]
        write_csv(path, header, rows)


def canonical_truth() -> models.LinearGaussianModel:
    """Ground-truth generative model for the canonical synthetic run."""
    return models.LinearGaussianModel(
        decoder_weight=[[1.0], [-0.6]],
        decoder_bias=[0.3, -0.2],
        obs_stddev=0.7,
        encoder_mean=[0.0],
        encoder_stddev=[1.0],
    )


def synthesize_data(truth: models.LinearGaussianModel, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, truth.d_z))
    noise = rng.standard_normal((n, truth.d_x))
    return z @ truth.decoder_weight.T + truth.decoder_bias + truth.obs_stddev * noise


class _BatchState:
    """Shared generative parameters plus one encoder per datapoint (d_z = 1)."""

    def __init__(self, truth: models.LinearGaussianModel, data: np.ndarray, init_posterior: bool):
        if truth.d_z != 1:
            raise ValueError("the batch trainer supports a 1-d latent space")
        self.a = truth.decoder_weight[:, 0].copy()
        self.b = truth.decoder_bias.copy()
        self.log_sigma = float(np.log(truth.obs_stddev))
        self.x = np.asarray(data, dtype=float)
        n = self.x.shape[0]
        if init_posterior:
            mean, var = self._posterior()
            self.m = mean
            self.log_t = 0.5 * np.log(var) * np.ones(n)
        else:
            self.m = np.zeros(n)
            self.log_t = np.zeros(n)

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    @property
    def t(self) -> np.ndarray:
        return np.exp(self.log_t)

    def _posterior(self) -> tuple[np.ndarray, float]:
        s2 = self.sigma**2
        prec = 1.0 + self.a @ self.a / s2
        mean = (self.x - self.b) @ self.a / (s2 * prec)
        return mean, 1.0 / prec

    def model_for(self, idx: int) -> models.LinearGaussianModel:
        return models.LinearGaussianModel(
            decoder_weight=self.a[:, None],
            decoder_bias=self.b,
            obs_stddev=self.sigma,
            encoder_mean=[self.m[idx]],
            encoder_stddev=[self.t[idx]],
        )

    # closed-form path quantities, vectorized over datapoints
    def _coeffs(self):
        s2 = self.sigma**2
        t2 = self.t**2
        prec_q = 1.0 / t2
        h_q = self.m / t2
        c_q = -0.5 * self.m**2 / t2 - self.log_t - 0.5 * np.log(2 * np.pi)
        prec_p = 1.0 + self.a @ self.a / s2
        r0 = self.x - self.b
        h_p = r0 @ self.a / s2
        d_x = self.x.shape[1]
        c_p = (
            -0.5 * np.log(2 * np.pi)
            - 0.5 * np.sum(r0 * r0, axis=1) / s2
            - 0.5 * d_x * np.log(2 * np.pi * s2)
        )
        return prec_q, h_q, c_q, prec_p, h_p, c_p

    def path_quantities(self, betas: np.ndarray):
        """(psi, eta, var) arrays of shape (B, N) from the scalar closed forms."""
        prec_q, h_q, c_q, prec_p, h_p, c_p = self._coeffs()
        bb = np.asarray(betas, dtype=float)[:, None]
        prec = (1.0 - bb) * prec_q + bb * prec_p
        h = (1.0 - bb) * h_q + bb * h_p
        c = (1.0 - bb) * c_q + bb * c_p
        psi = c + 0.5 * h * h / prec + 0.5 * np.log(2 * np.pi) - 0.5 * np.log(prec)
        m_w = prec_p - prec_q
        h_w = h_p - h_q
        c_w = c_p - c_q
        mu = h / prec
        cov = 1.0 / prec
        eta = -0.5 * (m_w * cov + m_w * mu * mu) + h_w * mu + c_w
        g = h_w - m_w * mu
        var = g * g * cov + 0.5 * (m_w * cov) ** 2
        return psi, eta, var

    def log_px(self) -> np.ndarray:
        s2 = self.sigma**2
        d_x = self.x.shape[1]
        cov = s2 * np.eye(d_x) + np.outer(self.a, self.a)
        _, logdet = np.linalg.slogdet(cov)
        r = self.x - self.b
        sol = np.linalg.solve(cov, r.T).T
        return -0.5 * (d_x * np.log(2 * np.pi) + logdet + np.sum(r * sol, axis=1))

    def exact_kl(self) -> float:
        """Batch-mean exact KL from each encoder to its posterior."""
        mean, var = self._posterior()
        t2 = self.t**2
        kl = 0.5 * (np.log(var) - 2 * self.log_t) + (t2 + (self.m - mean) ** 2) / (2 * var) - 0.5
        return float(np.mean(kl))

    def sample_log_weights(self, eps: np.ndarray):
        """Per-sample quantities for the whole batch: eps has shape (S, N)."""
        z = self.m + self.t * eps
        s2 = self.sigma**2
        d_x = self.x.shape[1]
        log_q = -0.5 * eps**2 - self.log_t - 0.5 * np.log(2 * np.pi)
        r = self.x[None, :, :] - z[:, :, None] * self.a[None, None, :] - self.b
        log_p = (
            -0.5 * z**2
            - 0.5 * np.log(2 * np.pi)
            - 0.5 * np.sum(r * r, axis=2) / s2
            - 0.5 * d_x * np.log(2 * np.pi * s2)
        )
        return z, r, log_p - log_q


def _batch_omega(log_w: np.ndarray, beta: float) -> np.ndarray:
    scaled = beta * log_w
    w = np.exp(scaled - scaled.max(axis=0, keepdims=True))
    return w / w.sum(axis=0, keepdims=True)


def _batch_gradients(state: _BatchState, z, r, log_w, schedule_betas: np.ndarray, objective: str):
    """Score-function theta and doubly reparameterized phi gradients.

    Returns (d_theta, d_phi) where d_theta is the batch mean packed as
    [a, b, log_sigma] and d_phi has one [d_m, d_log_t] row per datapoint.
    These are the same formulas as the single-model estimators in
    ``gradients``; a test pins the equivalence.
    """
    s2 = state.sigma**2
    d_x = state.x.shape[1]
    n = state.x.shape[0]
    dlogp_dz = -z + np.einsum("snx,x->sn", r, state.a) / s2
    dlogq_dz = -(z - state.m) / state.t**2
    dlogw_dz = dlogp_dz - dlogq_dz
    d_a = r * z[:, :, None] / s2
    d_b = r / s2
    d_ls = -d_x + np.sum(r * r, axis=2) / s2
    dlogq_dm = (z - state.m) / state.t**2
    dlogq_dlt = -1.0 + ((z - state.m) / state.t) ** 2

    def theta_at(beta: float, omega: np.ndarray) -> np.ndarray:
        def avg(q):  # SNIS mean per datapoint, then batch mean
            return np.mean(np.sum(omega[..., None] * q, axis=0), axis=0) if q.ndim == 3 else float(
                np.mean(np.sum(omega * q, axis=0))
            )

        def cov(q):
            if q.ndim == 3:
                m_q = np.sum(omega[..., None] * q, axis=0)
                m_w = np.sum(omega * log_w, axis=0)
                raw = np.sum(omega[..., None] * q * log_w[..., None], axis=0)
                return np.mean(raw - m_q * m_w[:, None], axis=0)
            m_q = np.sum(omega * q, axis=0)
            m_w = np.sum(omega * log_w, axis=0)
            raw = np.sum(omega * q * log_w, axis=0)
            return float(np.mean(raw - m_q * m_w))

        g_a = avg(d_a) + beta * cov(d_a)
        g_b = avg(d_b) + beta * cov(d_b)
        g_ls = avg(d_ls) + beta * cov(d_ls)
        return np.concatenate([g_a, g_b, [g_ls]])

    def phi_at(beta: float, omega: np.ndarray) -> np.ndarray:
        path_m = dlogw_dz
        path_lt = dlogw_dz * (z - state.m)
        first_m = np.sum(omega * path_m, axis=0)
        first_lt = np.sum(omega * path_lt, axis=0)
        coeff = beta * (1.0 - beta)
        d_m = (1.0 - 2.0 * beta) * first_m
        d_lt = (1.0 - 2.0 * beta) * first_lt
        if coeff != 0.0:
            m_w = np.sum(omega * log_w, axis=0)
            d_m = d_m + coeff * (np.sum(omega * path_m * log_w, axis=0) - first_m * m_w)
            d_lt = d_lt + coeff * (np.sum(omega * path_lt * log_w, axis=0) - first_lt * m_w)
        return np.stack([d_m, d_lt], axis=1)

    if objective == "iwae":
        omega = _batch_omega(log_w, 1.0)
        g_a = np.mean(np.sum(omega[..., None] * d_a, axis=0), axis=0)
        g_b = np.mean(np.sum(omega[..., None] * d_b, axis=0), axis=0)
        g_ls = float(np.mean(np.sum(omega * d_ls, axis=0)))
        d_theta = np.concatenate([g_a, g_b, [g_ls]])
        # reparameterized IWAE encoder gradient: sum of w-weighted total dlogw
        total_m = -dlogq_dm + dlogw_dz
        total_lt = -dlogq_dlt + dlogw_dz * (z - state.m)
        d_phi = np.stack(
            [np.sum(omega * total_m, axis=0), np.sum(omega * total_lt, axis=0)], axis=1
        )
        return d_theta, d_phi

    widths = np.diff(schedule_betas)
    d_theta = np.zeros(d_x + d_x + 1)
    d_phi = np.zeros((n, 2))
    for width, beta in zip(widths, schedule_betas[:-1]):
        omega = _batch_omega(log_w, float(beta))
        d_theta = d_theta + width * theta_at(float(beta), omega)
        d_phi = d_phi + width * phi_at(float(beta), omega)
    return d_theta, d_phi


def train(
    config: ExperimentConfig,
    n_data: int = 256,
    init_posterior: bool = False,
) -> tuple[TrainLog, _BatchState]:
    """SGD ascent on the left Riemann bound over seeded synthetic data."""
    rng = np.random.default_rng(config.seed)
    if config.model_spec is not None:
        truth, _ = models.load_model_file(config.model_spec)
        if not isinstance(truth, models.LinearGaussianModel):
            raise ValueError("training needs a linear_gaussian ground-truth spec")
    else:
        truth = canonical_truth()
    data = synthesize_data(truth, n_data, rng)
    state = _BatchState(truth, data, init_posterior=init_posterior)
    log = TrainLog()
    log.initial_kl = state.exact_kl()

    sched = schedules.linear_schedule(config.K)
    if config.schedule_strategy == "log_uniform" and config.K >= 2:
        sched = schedules.log_uniform_schedule(config.K, config.beta1)

    for epoch in range(1, config.epochs + 1):
        eps = rng.standard_normal((config.S, n_data))
        z, r, log_w = state.sample_log_weights(eps)
        if not np.all(np.isfinite(log_w)):
            raise TrainingDiverged(epoch)
        grid = snis.LogWeightGrid(log_w)

        if config.schedule_strategy in ("moments", "coarse_grained") and (
            epoch == 1 or (epoch - 1) % config.refresh_every == 0
        ):
            evaluator = schedules.EtaEvaluator.from_grid(grid)
            sched = _build_schedule(
                config.schedule_strategy, evaluator, config.K, config.beta1, config.J
            )

        if config.objective == "elbo":
            betas = np.array([0.0, 1.0])
        else:
            betas = sched.as_array()

        mc_eta = np.array([float(np.mean(snis.snis_eta(grid, b))) for b in betas[:-1]])
        mc_objective = float(np.sum(np.diff(betas) * mc_eta))
        if not np.isfinite(mc_objective):
            raise TrainingDiverged(epoch)

        d_theta, d_phi = _batch_gradients(state, z, r, log_w, betas, config.objective)
        if not (np.all(np.isfinite(d_theta)) and np.all(np.isfinite(d_phi))):
            raise TrainingDiverged(epoch)

        psi_b, eta_b, _ = state.path_quantities(betas)
        elbo = float(np.mean(eta_b[0]))
        eubo = float(np.mean(eta_b[-1]))
        widths = np.diff(betas)[:, None]
        exact_lower = float(np.mean(np.sum(widths * eta_b[:-1], axis=0)))
        exact_upper = float(np.mean(np.sum(widths * eta_b[1:], axis=0)))
        log_px = float(np.mean(state.log_px()))
        if not all(np.isfinite(v) for v in (elbo, eubo, exact_lower, exact_upper, log_px)):
            raise TrainingDiverged(epoch)
        log.append(
            TrainRow(
                epoch=epoch,
                tvo_lower=exact_lower,
                tvo_upper=exact_upper,
                elbo=elbo,
                eubo=eubo,
                log_px=log_px,
                grad_norm_theta=float(np.linalg.norm(d_theta)),
                grad_norm_phi=float(np.linalg.norm(d_phi)),
                schedule=tuple(betas.tolist()),
            )
        )

        lr = config.learning_rate
        d_x = state.x.shape[1]
        state.a = state.a + lr * d_theta[:d_x]
        state.b = state.b + lr * d_theta[d_x : 2 * d_x]
        state.log_sigma = state.log_sigma + lr * d_theta[-1]
        state.m = state.m + lr * d_phi[:, 0]
        state.log_t = state.log_t + lr * d_phi[:, 1]

    log.final_kl = state.exact_kl()
    return log, state
