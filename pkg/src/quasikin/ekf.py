"""Extended Kalman filter for the latent per-interval event counts.

For each observation interval the latent Gaussian count vector Z_i has prior
mean mu_i and prior covariance diag(mu_i) (prediction step).  The update
step conditions on the observed state change through the nonlinear map
G (gaussgamma.transform), linearized to second order, producing the
posterior moments that the EM machinery consumes.  No smoothing pass is
needed: Z_i is conditionally independent of later observations given the
states up to time t_i.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import gaussgamma
from .errors import NumericError, ValidationError
from .network import ReactionNetwork, Trajectory, _as_beta, binomial_covariates

__all__ = ["FilterConfig", "FilterState", "predict", "predict_state", "moments_of_g",
           "gain", "update", "filter_pass"]


@dataclass(frozen=True)
class FilterConfig:
    """Noise and numerical policy for the filter.

    sigma2 is the measurement-error variance (0 in the simulation studies);
    jitter is always added to the gain's inverted matrix so the sigma2 = 0
    case stays solvable.  Rates with expected counts below mu_floor are
    treated as inactive for the interval.  taylor_order = 1 drops the
    second-order mean correction (ablation only).
    """

    sigma2: float = 0.0
    mu_floor: float = 1e-8
    jitter: float = 1e-8
    taylor_order: int = 2

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValidationError("sigma2 must be nonnegative")
        if not self.mu_floor > 0 or not self.jitter > 0:
            raise ValidationError("mu_floor and jitter must be positive")
        if self.taylor_order not in (1, 2):
            raise ValidationError("taylor_order must be 1 or 2")


@dataclass(frozen=True)
class FilterState:
    """Per-interval filter output.

    Before ``update`` runs, g/jac/hess hold the transform and derivatives at
    the predicted mean and the update fields are None; afterwards they are
    re-evaluated at the updated mean z_upd.  jac and hess are the diagonals
    of the (diagonal) Jacobian and Hessian matrices.
    """

    mu: np.ndarray
    active: np.ndarray
    z_pred: np.ndarray
    v_pred: np.ndarray
    g: np.ndarray
    jac: np.ndarray
    hess: np.ndarray
    gain: np.ndarray | None = None
    z_upd: np.ndarray | None = None
    v_upd: np.ndarray | None = None


def predict(mu) -> tuple[np.ndarray, np.ndarray]:
    """Prior moments of the latent counts: exactly (mu, diag(mu))."""
    mu = np.asarray(mu, dtype=float)
    return mu.copy(), np.diag(mu)


def _eval_active(z, mu, active):
    """Transform and derivatives on active coordinates; inactive get the
    degenerate values (g = mu, zero derivatives)."""
    g = mu.copy()
    d1 = np.zeros_like(mu)
    d2 = np.zeros_like(mu)
    if active.any():
        tp = gaussgamma.evaluate(z[active], mu[active])
        g[active] = tp.x
        d1[active] = tp.d1
        d2[active] = tp.d2
    return g, d1, d2


def predict_state(mu, cfg: FilterConfig) -> FilterState:
    """Prediction step plus transform derivatives at the predicted mean."""
    mu = np.asarray(mu, dtype=float)
    if not np.isfinite(mu).all() or (mu < 0).any():
        raise ValidationError("interval rates must be finite and nonnegative")
    active = mu >= cfg.mu_floor
    z_pred, v_pred = predict(mu)
    v_pred[~active, :] = 0.0
    v_pred[:, ~active] = 0.0
    g, d1, d2 = _eval_active(z_pred, mu, active)
    return FilterState(mu=mu, active=active, z_pred=z_pred, v_pred=v_pred,
                       g=g, jac=d1, hess=d2)


def moments_of_g(z_hat, v, mu, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Second-order moments of G(Z) for Z ~ Normal(z_hat, v).

    mean = G(z_hat) + 0.5 * diag(v) * hess (the diagonal of V H, exact for a
    diagonal Hessian), cov = J v J^T with diagonal J.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    v = np.asarray(v, dtype=float)
    mu = np.asarray(mu, dtype=float)
    tp = gaussgamma.evaluate(z_hat, mu)
    mean = tp.x.copy()
    if order == 2:
        mean += 0.5 * np.diag(v) * tp.d2
    cov = tp.d1[:, None] * v * tp.d1[None, :]
    return mean, cov


def gain(v_pred, jac, net_effect, sigma2, jitter: float = 1e-8,
         interval: int | None = None) -> np.ndarray:
    """Kalman gain K = (V Vp J)^T (V J Vp J^T V^T + (sigma2 + jitter) I)^-1.

    V is the net-effect matrix, Vp the predicted latent covariance, J the
    diagonal Jacobian.  The p x p system is solved by Cholesky; on failure
    the jitter escalates a few times before a NumericError is raised.
    """
    v_pred = np.asarray(v_pred, dtype=float)
    jd = np.diag(jac) if np.asarray(jac).ndim == 2 else np.asarray(jac, dtype=float)
    net = np.asarray(net_effect, dtype=float)
    p = net.shape[0]
    cross = net @ (v_pred * jd[None, :])          # V Vp J  (p x r)
    mid = (net * jd[None, :]) @ v_pred @ (net * jd[None, :]).T
    mid = 0.5 * (mid + mid.T)
    noise = sigma2 + jitter
    for _ in range(4):
        try:
            factor = cho_factor(mid + noise * np.eye(p), lower=True)
            return cho_solve(factor, cross).T
        except np.linalg.LinAlgError:
            noise *= 100.0
    raise NumericError("gain matrix not positive definite after jitter escalation",
                       interval=interval)


def update(state: FilterState, dy, net_effect, cfg: FilterConfig,
           interval: int | None = None) -> FilterState:
    """Condition the predicted moments on the observed state change ``dy``."""
    dy = np.asarray(dy, dtype=float)
    net = np.asarray(net_effect, dtype=float)
    K = gain(state.v_pred, state.jac, net, cfg.sigma2, cfg.jitter, interval=interval)
    mean = state.g.copy()
    if cfg.taylor_order == 2:
        mean += 0.5 * np.diag(state.v_pred) * state.hess
    innov = dy - net @ mean
    z_upd = state.z_pred + K @ innov
    v_upd = state.v_pred - K @ (net @ (state.v_pred * state.jac[None, :]))
    v_upd = 0.5 * (v_upd + v_upd.T)
    if not (np.isfinite(z_upd).all() and np.isfinite(v_upd).all()):
        raise NumericError("non-finite filter update", interval=interval)
    g, d1, d2 = _eval_active(z_upd, state.mu, state.active)
    return replace(state, gain=K, z_upd=z_upd, v_upd=v_upd, g=g, jac=d1, hess=d2)


def filter_pass(net: ReactionNetwork, rates, traj: Trajectory,
                cfg: FilterConfig | None = None) -> list[FilterState]:
    """Run the filter over all intervals of a trajectory.

    Equivalent to predict_state + update per interval, but the transform
    evaluations are batched across intervals (the recursion feeds on the
    observed states only, so intervals decouple given the data).
    """
    cfg = cfg or FilterConfig()
    beta = _as_beta(net, rates)
    if traj.n_intervals < 1:
        raise ValidationError("need at least one observation interval")
    if traj.states.shape[1] != net.species_count:
        raise ValidationError(
            f"trajectory has {traj.states.shape[1]} species, network expects "
            f"{net.species_count}"
        )
    n = traj.n_intervals
    r = net.reaction_count
    dts = traj.dts
    theta = np.exp(beta)[net.param_map]
    covs = np.empty((n, r))
    for i in range(n):
        covs[i] = binomial_covariates(net, traj.states[i])
    mu_mat = dts[:, None] * covs * theta[None, :]
    if not np.isfinite(mu_mat).all():
        bad = int(np.argwhere(~np.isfinite(mu_mat))[0][0]) + 1
        raise NumericError("non-finite interval rates", interval=bad)
    active = mu_mat >= cfg.mu_floor

    g0, d10, d20 = _eval_batch(mu_mat, mu_mat, active)
    netf = net.net_effect.astype(float)
    dy = traj.increments
    states: list[FilterState] = []
    z_upd_mat = np.empty_like(mu_mat)
    for i in range(n):
        mu = mu_mat[i]
        v_pred = np.diag(np.where(active[i], mu, 0.0))
        st = FilterState(mu=mu, active=active[i], z_pred=mu.copy(), v_pred=v_pred,
                         g=g0[i], jac=d10[i], hess=d20[i])
        K = gain(v_pred, st.jac, netf, cfg.sigma2, cfg.jitter, interval=i + 1)
        mean = st.g.copy()
        if cfg.taylor_order == 2:
            mean += 0.5 * np.diag(v_pred) * st.hess
        innov = dy[i] - netf @ mean
        z_upd = mu + K @ innov
        v_upd = v_pred - K @ (netf @ (v_pred * st.jac[None, :]))
        v_upd = 0.5 * (v_upd + v_upd.T)
        if not (np.isfinite(z_upd).all() and np.isfinite(v_upd).all()):
            raise NumericError("non-finite filter update", interval=i + 1)
        z_upd_mat[i] = z_upd
        states.append(replace(st, gain=K, z_upd=z_upd, v_upd=v_upd))
    g1, d11, d21 = _eval_batch(z_upd_mat, mu_mat, active)
    return [replace(st, g=g1[i], jac=d11[i], hess=d21[i]) for i, st in enumerate(states)]


def _eval_batch(z_mat, mu_mat, active):
    """Flatten-active-evaluate-scatter helper shared by the batched pass."""
    g = mu_mat.copy()
    d1 = np.zeros_like(mu_mat)
    d2 = np.zeros_like(mu_mat)
    if active.any():
        tp = gaussgamma.evaluate(z_mat[active], mu_mat[active])
        g[active] = tp.x
        d1[active] = tp.d1
        d2[active] = tp.d2
    return g, d1, d2


def filter_diagnostics_rows(states: list[FilterState]) -> list[dict]:
    """Per-interval (mu, z_upd, diag v_upd) rows for optional CSV dumps."""
    rows = []
    for i, st in enumerate(states, start=1):
        rows.append({
            "interval": i,
            **{f"mu_{j + 1}": st.mu[j] for j in range(st.mu.size)},
            **{f"z_{j + 1}": st.z_upd[j] for j in range(st.mu.size)},
            **{f"v_{j + 1}": st.v_upd[j, j] for j in range(st.mu.size)},
        })
    return rows
