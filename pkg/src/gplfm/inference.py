"""Recursive and batch inference: Kalman filtering, RTS smoothing, the exact
batch Gaussian-process posterior, marginal likelihood and its optimization.

The filter runs on the discretized augmented model with a Joseph-form
covariance update and per-step symmetrization.  Missing observations are
handled by deleting the affected rows from the measurement model.  The
log marginal likelihood accumulates the Gaussian innovation terms, so batch
and recursive evaluations of the same regression problem agree to numerical
precision whenever the kernel has an exact state-space realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, pinvh

from . import kernels as kern
from .augment import AugmentedModel, augmented_output_map
from .errors import DivergedFilter, IllConditioned, OptimizationFailed
from .realization import discretize, realize, stationary_covariance
from .structural import OutputSpec

__all__ = [
    "GaussianState",
    "GaussianTrajectory",
    "EstimationResult",
    "kalman_filter",
    "rts_smooth",
    "estimate",
    "batch_gp",
    "negative_log_marginal_likelihood",
    "ssm_gp_regress",
    "TrainConfig",
    "TrainResult",
    "train_hyperparameters",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianState:
    """State estimate at one time index."""

    mean: np.ndarray
    cov: np.ndarray
    index: int = -1


@dataclass
class GaussianTrajectory:
    """Per-step Gaussian state estimates plus innovation statistics.

    ``innovations`` and ``innovation_covs`` hold NaN at steps/channels that
    carried no observation.  ``kind`` is ``"filtered"`` or ``"smoothed"``.
    """

    means: np.ndarray
    covs: np.ndarray
    innovations: np.ndarray
    innovation_covs: np.ndarray
    log_likelihood: float
    kind: str = "filtered"

    def __len__(self) -> int:
        return self.means.shape[0]

    def state(self, k: int) -> GaussianState:
        return GaussianState(mean=self.means[k], cov=self.covs[k], index=k)


def _chol_update(S: np.ndarray):
    """Cholesky with one jitter retry; raises DivergedFilter on failure."""
    try:
        return cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(np.trace(S) / S.shape[0], 1e-30)
        try:
            return cho_factor(S + jitter * np.eye(S.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise DivergedFilter(
                "innovation covariance lost positive definiteness") from exc


def _filter_loop(transitions, C: np.ndarray, R: np.ndarray, y: np.ndarray,
                 m0: np.ndarray, P0: np.ndarray) -> GaussianTrajectory:
    """Shared predict/update recursion.

    ``transitions(k)`` returns ``(Ad, Qd)`` used to predict into step ``k``
    (not called for ``k = 0``: the initial state is the prior at the first
    observation time).
    """
    N, n_o = y.shape
    n = m0.shape[0]
    means = np.empty((N, n))
    covs = np.empty((N, n, n))
    innovations = np.full((N, n_o), np.nan)
    innovation_covs = np.full((N, n_o, n_o), np.nan)
    loglik = 0.0
    m, P = m0.copy(), P0.copy()
    eye = np.eye(n)
    for k in range(N):
        if k > 0:
            Ad, Qd = transitions(k)
            m = Ad @ m
            P = Ad @ P @ Ad.T + Qd
            P = 0.5 * (P + P.T)
        obs = np.isfinite(y[k])
        if obs.any():
            Ck = C[obs]
            Rk = R[np.ix_(obs, obs)]
            e = y[k, obs] - Ck @ m
            S = Ck @ P @ Ck.T + Rk
            chol = _chol_update(S)
            K = cho_solve(chol, Ck @ P).T
            m = m + K @ e
            IKC = eye - K @ Ck
            P = IKC @ P @ IKC.T + K @ Rk @ K.T
            P = 0.5 * (P + P.T)
            logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
            loglik -= 0.5 * (e @ cho_solve(chol, e) + logdet + obs.sum() * _LOG_2PI)
            innovations[k, obs] = e
            innovation_covs[k][np.ix_(obs, obs)] = S
        means[k] = m
        covs[k] = P
    return GaussianTrajectory(
        means=means, covs=covs, innovations=innovations,
        innovation_covs=innovation_covs, log_likelihood=loglik, kind="filtered",
    )


def _smoother_gain(cross: np.ndarray, P_pred: np.ndarray) -> np.ndarray:
    """RTS gain ``cross @ P_pred^-1``, robust to singular predicted covariance.

    A rank-deficient prediction (deterministic blocks, zero initial
    covariance) may still pass Cholesky with a catastrophically small pivot,
    so fall back to the pseudo-inverse whenever conditioning is suspect.
    """
    try:
        chol = cho_factor(P_pred, lower=True)
        d = np.diag(chol[0])
        if d.min() > 1e-7 * d.max():
            return cho_solve(chol, cross.T).T
    except np.linalg.LinAlgError:
        pass
    return cross @ pinvh(P_pred, rtol=1e-10)


def _smooth_loop(transitions, filtered: GaussianTrajectory) -> GaussianTrajectory:
    N = len(filtered)
    means = filtered.means.copy()
    covs = filtered.covs.copy()
    for k in range(N - 2, -1, -1):
        Ad, Qd = transitions(k + 1)
        m_pred = Ad @ filtered.means[k]
        P_pred = Ad @ filtered.covs[k] @ Ad.T + Qd
        P_pred = 0.5 * (P_pred + P_pred.T)
        cross = filtered.covs[k] @ Ad.T
        G = _smoother_gain(cross, P_pred)
        means[k] = filtered.means[k] + G @ (means[k + 1] - m_pred)
        covs[k] = filtered.covs[k] + G @ (covs[k + 1] - P_pred) @ G.T
        covs[k] = 0.5 * (covs[k] + covs[k].T)
    return GaussianTrajectory(
        means=means, covs=covs, innovations=filtered.innovations,
        innovation_covs=filtered.innovation_covs,
        log_likelihood=filtered.log_likelihood, kind="smoothed",
    )


def kalman_filter(am: AugmentedModel, y: np.ndarray, init: GaussianState) -> GaussianTrajectory:
    """Forward Kalman filter on the discretized augmented model.

    Parameters
    ----------
    y : ndarray, shape (N, n_o)
        Observations at the uniform step of the model; NaN entries mark
        missing channels and are skipped by row deletion.
    init : GaussianState
        Prior at the first observation time (updated with ``y[0]``).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    if y.shape[1] != am.n_outputs:
        raise ValueError(f"y must have {am.n_outputs} channels, got {y.shape[1]}")
    return _filter_loop(lambda k: (am.Ad, am.Qd), am.C_aug, am.R, y,
                        init.mean, init.cov)


def rts_smooth(am: AugmentedModel, filtered: GaussianTrajectory) -> GaussianTrajectory:
    """Backward Rauch-Tung-Striebel pass over a filtered trajectory."""
    return _smooth_loop(lambda k: (am.Ad, am.Qd), filtered)


@dataclass(frozen=True)
class EstimationResult:
    """Input and virtual-response estimates extracted from a trajectory."""

    input_means: np.ndarray
    input_vars: np.ndarray
    response_means: np.ndarray
    response_vars: np.ndarray
    response_names: tuple[str, ...]


def estimate(
    am: AugmentedModel,
    trajectory: GaussianTrajectory,
    outputs: list[OutputSpec] | tuple[OutputSpec, ...] = (),
) -> EstimationResult:
    """Recover latent inputs and reconstruct responses at virtual channels."""
    N = len(trajectory)
    n_i = len(am.realizations)
    u_mean = np.empty((N, n_i))
    u_var = np.empty((N, n_i))
    for j, (sl, r) in enumerate(zip(am.latent_slices, am.realizations)):
        h = r.H[0]
        u_mean[:, j] = trajectory.means[:, sl] @ h
        u_var[:, j] = np.einsum("nij,i,j->n", trajectory.covs[:, sl, sl], h, h)
    outputs = tuple(outputs)
    if outputs:
        C_e = augmented_output_map(am, list(outputs))
        y_mean = trajectory.means @ C_e.T
        y_var = np.einsum("ki,nij,kj->nk", C_e, trajectory.covs, C_e)
        names = tuple(o.name for o in outputs)
    else:
        y_mean = np.empty((N, 0))
        y_var = np.empty((N, 0))
        names = ()
    return EstimationResult(
        input_means=u_mean, input_vars=u_var,
        response_means=y_mean, response_vars=y_var, response_names=names,
    )


# ---------------------------------------------------------------------------
# batch Gaussian-process regression (the O(n^3) oracle)

def _jitter(kernel: kern.Kernel, times: np.ndarray) -> float:
    """Diagonal jitter, 1e-10 times the largest prior variance on the grid.

    Applied identically to the batch Gram matrix and to the state-space
    measurement noise so the two likelihood paths describe the same model.
    """
    variances = np.asarray(kernel(times, times), dtype=float)
    return 1e-10 * max(float(np.max(variances)), 1e-300)


def _gram_cholesky(kernel: kern.Kernel, times: np.ndarray, noise_var: float):
    Ky = kernel.gram(times)
    scale = max(float(np.max(np.diag(Ky))), 1e-300)
    Ky[np.diag_indices_from(Ky)] += noise_var + _jitter(kernel, times)
    try:
        return cho_factor(Ky, lower=True)
    except np.linalg.LinAlgError:
        Ky[np.diag_indices_from(Ky)] += 1e-6 * scale
        try:
            return cho_factor(Ky, lower=True)
        except np.linalg.LinAlgError as exc:
            raise IllConditioned("Gram matrix factorization failed") from exc


def batch_gp(
    kernel: kern.Kernel,
    train_times: np.ndarray,
    train_y: np.ndarray,
    noise_var: float,
    test_times: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form GP posterior mean and variance at the test times."""
    t = np.asarray(train_times, dtype=float).ravel()
    s = np.asarray(test_times, dtype=float).ravel()
    y = np.asarray(train_y, dtype=float).ravel()
    chol = _gram_cholesky(kernel, t, noise_var)
    alpha = cho_solve(chol, y)
    Kst = np.asarray(kernel(s[:, None], t[None, :]), dtype=float)
    mean = Kst @ alpha
    v = cho_solve(chol, Kst.T)
    var = np.asarray(kernel(s, s), dtype=float) - np.sum(Kst * v.T, axis=1)
    return mean, np.maximum(var, 0.0)


def _nll_batch(kernel: kern.Kernel, times: np.ndarray, y: np.ndarray,
               noise_var: float) -> float:
    chol = _gram_cholesky(kernel, times, noise_var)
    alpha = cho_solve(chol, y)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    n = len(y)
    return 0.5 * (n * _LOG_2PI + logdet + float(y @ alpha))


def _gp_transitions(r, times: np.ndarray):
    """Per-step (Ad, Qd) for a realization over a possibly nonuniform grid."""
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def step(dt: float):
        key = round(dt, 15)
        if key not in cache:
            d = discretize(r, dt)
            cache[key] = (d.Ad, d.Qd)
        return cache[key]

    return step


def _gp_model(kernel: kern.Kernel, times: np.ndarray, J: int, nu_cap: float):
    """Realize a kernel for regression on the given grid.

    The recursion starts at the realization's reference time (0 for trees
    with Wiener/linear parts, so their anchored covariances are honored) and
    predicts to the first observation.
    """
    t = np.asarray(times, dtype=float).ravel()
    has_anchor = _has_anchored_leaf(kernel)
    r = realize(kernel, J=J, nu_cap=nu_cap, t0=0.0)
    P0 = r.P_init if has_anchor else stationary_covariance(r)
    start = r.t_ref if has_anchor else t[0]
    if has_anchor and t[0] < start - 1e-12:
        raise ValueError("observation times precede the realization anchor")
    return r, P0, start, t


def _has_anchored_leaf(kernel: kern.Kernel) -> bool:
    if isinstance(kernel, (kern.Wiener, kern.Linear)):
        return True
    if isinstance(kernel, (kern.Sum, kern.Product)):
        return _has_anchored_leaf(kernel.left) or _has_anchored_leaf(kernel.right)
    return False


def _run_gp_filter(kernel, times, y, noise_var, J, nu_cap):
    r, P0, start, t = _gp_model(kernel, times, J, nu_cap)
    step = _gp_transitions(r, t)
    dts = np.diff(np.concatenate([[start], t]))
    if np.any(dts < -1e-12):
        raise ValueError("times must be sorted")

    first_gap = dts[0]
    m0 = np.zeros(r.m)
    if first_gap > 1e-15:
        Ad0, Qd0 = step(first_gap)
        P0 = Ad0 @ P0 @ Ad0.T + Qd0

    def transitions(k):
        return step(dts[k])

    C = r.H
    R = np.array([[noise_var + _jitter(kernel, t)]])
    yv = np.asarray(y, dtype=float).reshape(-1, 1)
    traj = _filter_loop(transitions, C, R, yv, m0, P0)
    return r, transitions, traj


def ssm_gp_regress(
    kernel: kern.Kernel,
    times: np.ndarray,
    y: np.ndarray,
    noise_var: float,
    smooth: bool = True,
    J: int = 6,
    nu_cap: float = 3.5,
):
    """State-space GP regression at the observation times.

    Returns ``(mean, var, log_likelihood)`` of the latent function at the
    training points, using the filter (and by default the RTS smoother); the
    recursive dual of :func:`batch_gp`.
    """
    r, transitions, traj = _run_gp_filter(kernel, times, y, noise_var, J, nu_cap)
    if smooth:
        traj = _smooth_loop(transitions, traj)
    h = r.H[0]
    mean = traj.means @ h
    var = np.einsum("nij,i,j->n", traj.covs, h, h)
    return mean, np.maximum(var, 0.0), traj.log_likelihood


def negative_log_marginal_likelihood(
    kernel: kern.Kernel,
    times: np.ndarray,
    y: np.ndarray,
    noise_var: float,
    mode: str = "batch",
    J: int = 6,
    nu_cap: float = 3.5,
) -> float:
    """Negative log marginal likelihood of the data under the GP prior.

    ``mode="batch"`` evaluates the closed-form expression; ``mode="ssm"``
    accumulates the innovation terms of the equivalent state-space filter.
    """
    t = np.asarray(times, dtype=float).ravel()
    yv = np.asarray(y, dtype=float).ravel()
    if mode == "batch":
        return _nll_batch(kernel, t, yv, noise_var)
    if mode == "ssm":
        _, _, traj = _run_gp_filter(kernel, t, yv, noise_var, J, nu_cap)
        return -traj.log_likelihood
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# hyperparameter training

@dataclass(frozen=True)
class TrainConfig:
    """Settings for marginal-likelihood hyperparameter optimization."""

    n_starts: int = 4
    spread: float = 1.0  # std of log-space perturbations for extra starts
    max_iter: int = 300
    freeze: frozenset[str] = frozenset()
    mode: str = "batch"
    J: int = 6
    seed: int = 0


@dataclass(frozen=True)
class TrainResult:
    kernel: kern.Kernel
    nll: float
    n_evaluations: int


def train_hyperparameters(
    kernel: kern.Kernel,
    times: np.ndarray,
    y: np.ndarray,
    noise_var: float,
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Fit positive hyperparameters by minimizing the NLL.

    Works in log space with a derivative-free Nelder-Mead simplex,
    multi-started from the template's values plus seeded perturbations.
    Frozen parameters (``config.freeze``, by bare field name or dotted
    path) keep their template values.
    """
    from scipy.optimize import minimize

    t = np.asarray(times, dtype=float).ravel()
    yv = np.asarray(y, dtype=float).ravel()
    params = kern.free_parameters(kernel, frozen=config.freeze)
    evals = 0

    def objective(x: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        updates = {p: math.exp(v) for (p, _), v in zip(params, x)}
        try:
            k = kern.with_parameters(kernel, updates)
            val = negative_log_marginal_likelihood(
                k, t, yv, noise_var, mode=config.mode, J=config.J)
        except (ValueError, IllConditioned, DivergedFilter, OverflowError):
            return 1e300
        return val if np.isfinite(val) else 1e300

    if not params:
        nll = objective(np.empty(0))
        if nll >= 1e300:
            raise OptimizationFailed("template kernel has non-finite NLL")
        return TrainResult(kernel=kernel, nll=nll, n_evaluations=evals)

    x0 = np.log([v for _, v in params])
    rng = np.random.default_rng(config.seed)
    starts = [x0] + [x0 + config.spread * rng.standard_normal(len(x0))
                     for _ in range(max(config.n_starts - 1, 0))]
    best_x, best_val = None, np.inf
    for s in starts:
        res = minimize(objective, s, method="Nelder-Mead",
                       options={"maxiter": config.max_iter, "xatol": 1e-4,
                                "fatol": 1e-8, "adaptive": True})
        if np.isfinite(res.fun) and res.fun < 1e300 and res.fun < best_val:
            best_val, best_x = res.fun, res.x
    if best_x is None:
        raise OptimizationFailed("all optimizer starts returned non-finite NLL")
    updates = {p: math.exp(v) for (p, _), v in zip(params, best_x)}
    return TrainResult(kernel=kern.with_parameters(kernel, updates),
                       nll=float(best_val), n_evaluations=evals)
