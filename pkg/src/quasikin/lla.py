"""Local linear (Euler-Maruyama) baseline estimator.

State increments are modelled as Gaussian with mean V mu_i and covariance
V diag(mu_i) V^T, conditionally on the previous state.  ``lla_loglik``
evaluates that likelihood; ``lla_fit`` maximizes it by iteratively
reweighted least squares on the rate scale, which is the classical
generalized least-squares approach this package's EM estimator is
benchmarked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularModelError, ValidationError
from .network import ReactionNetwork, Trajectory, _as_beta, tying_matrix
from .em import interval_covariates

__all__ = ["LlaConfig", "LlaInfo", "lla_loglik", "lla_fit"]

_LOG2PI = math.log(2.0 * math.pi)
_THETA_FLOOR = 1e-10   # rates projected here before the log map
_NULL_TOL = 1e-8       # residual mass allowed outside the covariance range


@dataclass(frozen=True)
class LlaConfig:
    """IRLS numerics: iteration budget, step tolerance, covariance handling.

    ``max_iter`` counts reweighted solves after the unweighted start;
    ``max_iter=1`` is the one-shot (single reweighting) mode.  ``ridge`` is
    added to the weighting covariance; rank decisions use
    ``pinv_threshold`` relative to the largest eigenvalue.
    """

    max_iter: int = 50
    tol: float = 1e-8
    ridge: float = 0.0
    pinv_threshold: float = 1e-12

    def __post_init__(self):
        if self.ridge < 0:
            raise ValidationError("ridge must be nonnegative")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")


@dataclass(frozen=True)
class LlaInfo:
    converged: bool
    iterations: int
    loglik: float
    warnings: tuple[str, ...] = ()


def _psd_eig(mat: np.ndarray, threshold: float):
    w, u = np.linalg.eigh(0.5 * (mat + mat.T))
    cut = threshold * max(float(w.max()), 0.0)
    keep = w > cut
    return w, u, keep


def lla_loglik(net: ReactionNetwork, rates, traj: Trajectory,
               ridge: float = 0.0, pinv_threshold: float = 1e-12) -> float:
    """Gaussian increment log-likelihood, degenerate-covariance aware.

    Rank-deficient interval covariances use the pseudo-inverse and
    pseudo-determinant on their range; residual mass outside the range means
    the observation is impossible under the degenerate model (-inf).  An
    interval with no usable rank at all (every rate zero, no ridge) raises
    SingularModelError.
    """
    beta = _as_beta(net, rates)
    covs = interval_covariates(net, traj)
    mu = covs * np.exp(beta)[net.param_map][None, :]
    netf = net.net_effect.astype(float)
    dy = traj.increments
    total = 0.0
    for i in range(traj.n_intervals):
        cov = (netf * mu[i][None, :]) @ netf.T
        if ridge > 0:
            cov = cov + ridge * np.eye(net.species_count)
        w, u, keep = _psd_eig(cov, pinv_threshold)
        rank = int(keep.sum())
        if rank == 0:
            raise SingularModelError(
                "increment covariance has no usable rank (all rates zero?)",
                interval=i + 1,
            )
        resid = dy[i] - netf @ mu[i]
        coords = u.T @ resid
        outside = float(np.linalg.norm(coords[~keep]))
        if outside > _NULL_TOL * max(1.0, float(np.linalg.norm(resid))):
            return -math.inf
        kept = coords[keep]
        wk = w[keep]
        total += -0.5 * (rank * _LOG2PI + float(np.log(wk).sum())
                         + float((kept * kept / wk).sum()))
    return total


def lla_fit(net: ReactionNetwork, traj: Trajectory, cfg: LlaConfig | None = None,
            full_output: bool = False):
    """Generalized least squares for the log-rates by IRLS.

    The increments are linear in the rate vector: E[dY_i] = V diag(c_i) T tau
    with c the rate-free covariates and T the tying indicator.  Starting from
    the unweighted solution, weights are rebuilt from the current covariance
    and the weighted normal equations re-solved; the iterate with the best
    ``lla_loglik`` is returned (negative solutions are projected to a small
    positive floor before the log map).
    """
    cfg = cfg or LlaConfig()
    if traj.n_intervals < 1:
        raise ValidationError("need at least one observation interval")
    if traj.states.shape[1] != net.species_count:
        raise ValidationError(
            f"trajectory has {traj.states.shape[1]} species, network expects "
            f"{net.species_count}"
        )
    covs = interval_covariates(net, traj)
    netf = net.net_effect.astype(float)
    tying = tying_matrix(net)
    dy = traj.increments
    n, p, d = traj.n_intervals, net.species_count, net.param_count
    designs = np.empty((n, p, d))
    for i in range(n):
        designs[i] = netf @ (covs[i][:, None] * tying)

    warns: list[str] = []

    def solve_weighted(weights):
        m = np.zeros((d, d))
        b = np.zeros(d)
        for i in range(n):
            xw = designs[i].T @ weights[i]
            m += xw @ designs[i]
            b += xw @ dy[i]
        w, u, keep = _psd_eig(m, cfg.pinv_threshold)
        if not keep.all():
            msg = "rank-deficient design; pseudo-inverse solution"
            if msg not in warns:
                warns.append(msg)
        inv = (u[:, keep] / w[keep][None, :]) @ u[:, keep].T
        return inv @ b

    def project(tau):
        return np.maximum(tau, _THETA_FLOOR)

    eye_w = [np.eye(p) for _ in range(n)]
    tau = solve_weighted(eye_w)
    beta = np.log(project(tau))
    best_beta = beta
    best_ll = _safe_loglik(net, beta, traj, cfg)
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iter + 1):
        mu = covs * (tying @ project(tau))[None, :]
        weights = []
        for i in range(n):
            cov = (netf * mu[i][None, :]) @ netf.T
            if cfg.ridge > 0:
                cov = cov + cfg.ridge * np.eye(p)
            w, u, keep = _psd_eig(cov, cfg.pinv_threshold)
            inv = (u[:, keep] / w[keep][None, :]) @ u[:, keep].T if keep.any() else np.zeros((p, p))
            weights.append(inv)
        tau_new = solve_weighted(weights)
        beta_new = np.log(project(tau_new))
        ll = _safe_loglik(net, beta_new, traj, cfg)
        if ll > best_ll:
            best_ll, best_beta = ll, beta_new
        err = float(np.max(np.abs(beta_new - beta)))
        tau, beta = tau_new, beta_new
        iterations = it
        if err <= cfg.tol:
            converged = True
            break
    if not converged and cfg.max_iter > 1:
        warns.append("IRLS did not converge; returning the best-likelihood iterate")
    info = LlaInfo(converged=converged, iterations=iterations,
                   loglik=best_ll, warnings=tuple(warns))
    if full_output:
        return best_beta, info
    return best_beta


def _safe_loglik(net, beta, traj, cfg):
    try:
        return lla_loglik(net, beta, traj, ridge=cfg.ridge,
                          pinv_threshold=cfg.pinv_threshold)
    except SingularModelError:
        return -math.inf
