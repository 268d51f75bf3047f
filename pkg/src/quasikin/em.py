"""EM estimation of log-rates from a discretely observed trajectory.

The E-step is the extended Kalman filter (ekf module); this module houses
the surrogate objective built from the filtered moments, its analytic
gradient, the quasi-Newton M-step, the EM driver, and the Q-based BIC used
for model comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import minimize

from .ekf import FilterConfig, FilterState, filter_pass
from .errors import NumericError, ValidationError
from .network import ReactionNetwork, Trajectory, _as_beta, binomial_covariates
from .rng import GENERATOR_NAME

__all__ = ["EmConfig", "OptimizerConfig", "FitResult", "q_latent", "q_observed",
           "q_gradient", "m_step", "em_fit", "bic"]

_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class OptimizerConfig:
    """Inner maximization settings (quasi-Newton with analytic gradients)."""

    max_iter: int = 200
    gtol: float = 1e-8


@dataclass(frozen=True)
class EmConfig:
    tol: float = 0.002
    maxit: int = 300
    filter: FilterConfig = field(default_factory=FilterConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.maxit < 1:
            raise ValidationError("maxit must be >= 1")


@dataclass(frozen=True)
class FitResult:
    """Outcome of em_fit or an LLA fit wrapped for serialization."""

    estimator: str
    beta_hat: np.ndarray
    iterations: int
    err_trace: tuple[float, ...]
    q_value: float | None
    bic: float | None
    converged: bool
    config: dict
    seed: str | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["beta_hat"] = [float(b) for b in self.beta_hat]
        out["err_trace"] = [float(e) for e in self.err_trace]
        out["warnings"] = list(self.warnings)
        out["rng"] = GENERATOR_NAME
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), indent=2, **kwargs)


def interval_covariates(net: ReactionNetwork, traj: Trajectory) -> np.ndarray:
    """N x r matrix c with c[i, j] = dt_i * binomial product at Y_{i-1}.

    The interval rates factor as mu[i, j] = c[i, j] * exp(beta[param_map[j]]),
    so c captures everything rate-independent and is cached across M-step
    evaluations.
    """
    n = traj.n_intervals
    covs = np.empty((n, net.reaction_count))
    for i in range(n):
        covs[i] = binomial_covariates(net, traj.states[i])
    return covs * traj.dts[:, None]


def _stacked_moments(filter_states: list[FilterState]):
    z = np.stack([st.z_upd for st in filter_states])
    vdiag = np.stack([np.diag(st.v_upd) for st in filter_states])
    active = np.stack([st.active for st in filter_states])
    return z, vdiag, active


def q_latent(rates, filter_states: list[FilterState], net: ReactionNetwork,
             traj: Trajectory, covs: np.ndarray | None = None) -> float:
    """Expected latent-count log-likelihood with the filtered moments frozen.

    Per interval, over coordinates active at the filter's parameters:
    -0.5 * [ log(2 pi) + log mu + (z^2 + V_jj)/mu - 2 z + mu ] summed over
    active coordinates, with mu recomputed at the argument rates.
    """
    beta = _as_beta(net, rates)
    if covs is None:
        covs = interval_covariates(net, traj)
    z, vdiag, active = _stacked_moments(filter_states)
    mu = covs * np.exp(beta)[net.param_map][None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = _LOG2PI + np.log(mu) + (z * z + vdiag) / mu - 2.0 * z + mu
    terms = np.where(active, terms, 0.0)
    if not np.isfinite(terms).all():
        i, j = np.argwhere(~np.isfinite(terms))[0]
        raise NumericError(f"non-finite Q term for reaction {j + 1}", interval=int(i) + 1)
    return -0.5 * float(terms.sum())


def q_gradient(rates, filter_states: list[FilterState], net: ReactionNetwork,
               traj: Trajectory, covs: np.ndarray | None = None) -> np.ndarray:
    """Analytic gradient of q_latent in the free log-rates.

    d mu / d beta_m = mu for the channels tied to m, so the per-entry
    derivative is -0.5 * (1 + mu - (z^2 + V_jj)/mu), accumulated by tie.
    """
    beta = _as_beta(net, rates)
    if covs is None:
        covs = interval_covariates(net, traj)
    z, vdiag, active = _stacked_moments(filter_states)
    mu = covs * np.exp(beta)[net.param_map][None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(active, 1.0 + mu - (z * z + vdiag) / mu, 0.0)
    per_reaction = per.sum(axis=0)
    return -0.5 * np.bincount(net.param_map, weights=per_reaction,
                              minlength=net.param_count)


def q_observed(filter_states: list[FilterState], net: ReactionNetwork,
               traj: Trajectory, sigma2: float) -> float | None:
    """Expected observation log-likelihood term at the filtered moments.

    Constant in the rates (it depends on them only through the frozen filter
    states); used for BIC and diagnostics.  Not evaluable at sigma2 = 0,
    in which case None is returned and BIC falls back to q_latent alone.
    """
    if sigma2 == 0.0:
        return None
    netf = net.net_effect.astype(float)
    gram = netf.T @ netf
    p = net.species_count
    dy = traj.increments
    total = 0.0
    for i, st in enumerate(filter_states):
        m = st.g + 0.5 * np.diag(st.v_upd) * st.hess
        cov_g = st.jac[:, None] * st.v_upd * st.jac[None, :]
        resid_part = dy[i] @ dy[i] - 2.0 * dy[i] @ (netf @ m) + m @ gram @ m
        total += resid_part + float((gram * cov_g).sum())
    n = len(filter_states)
    return -0.5 * n * p * math.log(2.0 * math.pi * sigma2) - 0.5 * total / sigma2


def m_step(filter_states: list[FilterState], net: ReactionNetwork, traj: Trajectory,
           beta_init, cfg: EmConfig | None = None, full_output: bool = False):
    """Maximize q_latent over the log-rates from ``beta_init``.

    Quasi-Newton (L-BFGS) with the analytic gradient; the returned point is
    guaranteed not to be worse than the start (up to 1e-12), falling back to
    the start otherwise.
    """
    cfg = cfg or EmConfig()
    beta0 = _as_beta(net, beta_init)
    covs = interval_covariates(net, traj)

    def neg_q(b):
        return -q_latent(b, filter_states, net, traj, covs)

    def neg_grad(b):
        return -q_gradient(b, filter_states, net, traj, covs)

    res = minimize(neg_q, beta0, jac=neg_grad, method="L-BFGS-B",
                   options={"maxiter": cfg.optimizer.max_iter, "gtol": cfg.optimizer.gtol})
    warn = None
    beta_new = res.x
    if not res.success:
        warn = f"inner optimizer did not report convergence: {res.message}"
    if -res.fun < -neg_q(beta0) - 1e-12:
        beta_new = beta0
        warn = "inner optimizer failed to improve the objective; kept the start"
    if full_output:
        return beta_new, warn
    return beta_new


def em_fit(net: ReactionNetwork, traj: Trajectory, beta_init=None,
           cfg: EmConfig | None = None, seed_label: str | None = None) -> FitResult:
    """Alternate the filter (E) and m_step (M) until the rates stabilize.

    Convergence is declared when the maximum absolute change of any
    component drops to ``cfg.tol``.  ``beta_init`` defaults to the local
    linear baseline fit, mirroring the standard pipeline.
    """
    cfg = cfg or EmConfig()
    if beta_init is None:
        from .lla import lla_fit
        beta_init = lla_fit(net, traj)
    beta = _as_beta(net, beta_init)
    trace: list[float] = []
    warns: list[str] = []
    converged = False
    iterations = 0
    for it in range(1, cfg.maxit + 1):
        try:
            states = filter_pass(net, beta, traj, cfg.filter)
        except NumericError as exc:
            raise NumericError(f"E-step failed at EM iteration {it}: {exc}") from exc
        beta_new, warn = m_step(states, net, traj, beta, cfg, full_output=True)
        if warn and warn not in warns:
            warns.append(warn)
        err = float(np.max(np.abs(beta_new - beta)))
        trace.append(err)
        beta = beta_new
        iterations = it
        if err <= cfg.tol:
            converged = True
            break
    states = filter_pass(net, beta, traj, cfg.filter)
    q1 = q_latent(beta, states, net, traj)
    q2 = q_observed(states, net, traj, cfg.filter.sigma2)
    if q2 is None:
        q_val = q1
        if cfg.filter.sigma2 == 0.0:
            warns.append("sigma2 = 0: observation term of Q not evaluable; "
                         "Q and BIC use the latent term only")
    else:
        q_val = q1 + q2
    bic_val = bic(q_val, traj.n_intervals, net.param_count)
    return FitResult(
        estimator="em",
        beta_hat=beta,
        iterations=iterations,
        err_trace=tuple(trace),
        q_value=q_val,
        bic=bic_val,
        converged=converged,
        config=_config_dict(cfg),
        seed=seed_label,
        warnings=tuple(warns),
    )


def bic(fit, n_intervals: int, d_params: int) -> float:
    """Q-based model selection score: -2 Q + d log N.

    ``d_params`` counts free rate parameters, so tied models are penalized
    for what they actually estimate.  Accepts a FitResult or a raw Q value.
    """
    q = fit.q_value if isinstance(fit, FitResult) else float(fit)
    if n_intervals < 1:
        raise ValidationError("n_intervals must be >= 1")
    return -2.0 * q + d_params * math.log(n_intervals)


def _config_dict(cfg: EmConfig) -> dict:
    return {
        "tol": cfg.tol,
        "maxit": cfg.maxit,
        "sigma2": cfg.filter.sigma2,
        "mu_floor": cfg.filter.mu_floor,
        "jitter": cfg.filter.jitter,
        "taylor_order": cfg.filter.taylor_order,
        "optimizer_max_iter": cfg.optimizer.max_iter,
        "optimizer_gtol": cfg.optimizer.gtol,
    }
