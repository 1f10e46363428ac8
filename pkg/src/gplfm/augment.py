"""Augmented state-space models: structural dynamics plus latent-force states.

Each unknown input gets a kernel realization; its output row feeds the
structural input column, giving the joint continuous model

    [x'; z1'; ...] = [[A, b1 H1, ...], [0, F1, ...], ...] [x; z1; ...] + w

with outputs ``y = [C, g1 H1, ...] [x; z] + v``.  Discretization is joint:
one matrix exponential for the transition and a matrix-fraction solve for
the process noise, so the coupling between structural and latent blocks is
captured exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, eig, expm

from .errors import DimensionMismatch, NoInputs
from .realization import SsmRealization, stationary_covariance
from .structural import OutputSpec, StateSpaceModel, to_statespace

__all__ = [
    "AugmentedModel",
    "assemble",
    "initial_state",
    "augmented_output_map",
    "transmission_zeros",
]


@dataclass(frozen=True)
class AugmentedModel:
    """Joint structural + latent-force model, continuous and discretized."""

    A_aug: np.ndarray
    C_aug: np.ndarray
    Q_aug_c: np.ndarray
    Ad: np.ndarray
    Qd: np.ndarray
    R: np.ndarray
    dt: float
    ss: StateSpaceModel
    realizations: tuple[SsmRealization, ...]
    latent_slices: tuple[slice, ...]

    @property
    def n_aug(self) -> int:
        return self.A_aug.shape[0]

    @property
    def n_struct(self) -> int:
        return self.ss.n_states

    @property
    def n_outputs(self) -> int:
        return self.C_aug.shape[0]


def assemble(
    ss: StateSpaceModel,
    realizations: list[SsmRealization] | tuple[SsmRealization, ...],
    dt: float,
) -> AugmentedModel:
    """Build and discretize the augmented model.

    ``realizations`` must supply one kernel realization per structural input
    column.
    """
    n_i = ss.n_inputs
    if n_i == 0 or len(realizations) == 0:
        raise NoInputs("at least one latent input is required")
    if len(realizations) != n_i:
        raise DimensionMismatch(
            f"need {n_i} realizations (one per input), got {len(realizations)}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    ns = ss.n_states
    dims = [r.m for r in realizations]
    n_aug = ns + sum(dims)
    A = np.zeros((n_aug, n_aug))
    A[:ns, :ns] = ss.A
    C = np.zeros((ss.n_outputs, n_aug))
    C[:, :ns] = ss.C
    Qc = np.zeros((n_aug, n_aug))
    Qc[:ns, :ns] = ss.Q
    slices = []
    offset = ns
    for j, r in enumerate(realizations):
        sl = slice(offset, offset + r.m)
        slices.append(sl)
        A[sl, sl] = r.F
        A[:ns, sl] = np.outer(ss.B[:, j], r.H)
        C[:, sl] = np.outer(ss.G[:, j], r.H)
        Qc[sl, sl] = r.L @ r.Qc @ r.L.T
        offset += r.m
    Ad, Qd = _joint_discretize(A, Qc, dt)
    return AugmentedModel(
        A_aug=A, C_aug=C, Q_aug_c=Qc, Ad=Ad, Qd=Qd, R=ss.R, dt=dt,
        ss=ss, realizations=tuple(realizations), latent_slices=tuple(slices),
    )


def _joint_discretize(A: np.ndarray, Qc: np.ndarray, dt: float):
    n = A.shape[0]
    if not Qc.any():
        return expm(A * dt), np.zeros((n, n))
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[:n, n:] = Qc
    M[n:, n:] = -A.T
    E = expm(M * dt)
    Ad = E[:n, :n]
    Qd = E[:n, n:] @ Ad.T
    return Ad, 0.5 * (Qd + Qd.T)


def initial_state(
    am: AugmentedModel,
    x0_mean: np.ndarray | None = None,
    latent_init: str = "stationary",
    structural_cov: np.ndarray | float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Initial mean and covariance for the augmented filter.

    ``latent_init`` selects the latent-force covariance blocks: ``"zero"``
    starts them at zero (matching a fully deterministic start), while
    ``"stationary"`` uses each realization's steady-state covariance and
    avoids burn-in transients.  The structural block comes from
    ``structural_cov`` (scalar multiple of the identity, or a full matrix).
    """
    if latent_init not in ("zero", "stationary"):
        raise ValueError(f"unknown latent_init policy {latent_init!r}")
    n = am.n_aug
    ns = am.n_struct
    mean = np.zeros(n)
    if x0_mean is not None:
        x0_mean = np.asarray(x0_mean, dtype=float)
        if x0_mean.shape != (ns,):
            raise DimensionMismatch(f"x0_mean must have shape ({ns},)")
        mean[:ns] = x0_mean
    cov = np.zeros((n, n))
    sc = np.asarray(structural_cov, dtype=float)
    cov[:ns, :ns] = sc * np.eye(ns) if sc.ndim == 0 else sc
    if latent_init == "stationary":
        for sl, r in zip(am.latent_slices, am.realizations):
            cov[sl, sl] = stationary_covariance(r)
    return mean, cov


def augmented_output_map(am: AugmentedModel, outputs: list[OutputSpec]) -> np.ndarray:
    """Augmented output matrix for response estimation at arbitrary channels.

    Rows follow ``[C_e | g_e,1 H1 | ... ]`` so that virtual responses are
    ``C_e_aug @ x_aug`` (the latent state supplies the input feedthrough).
    """
    if am.ss.reduced is None:
        raise ValueError("augmented model lacks the reduced structural model")
    probe = to_statespace(am.ss.reduced, outputs)
    C_e = np.zeros((len(outputs), am.n_aug))
    C_e[:, : am.n_struct] = probe.C
    for j, (sl, r) in enumerate(zip(am.latent_slices, am.realizations)):
        C_e[:, sl] = np.outer(probe.G[:, j], r.H)
    return C_e


def transmission_zeros(am: AugmentedModel) -> np.ndarray:
    """Invariant zeros of the discrete augmented system seen from the noise input.

    The input channel is the ZOH-discretized latent white-noise entry point;
    requires as many noise channels as outputs (square Rosenbrock pencil).
    Zeros outside the unit circle indicate unstable inversion of the joint
    input-state estimation problem.
    """
    n = am.n_aug
    ns = am.n_struct
    L_cols = []
    for sl, r in zip(am.latent_slices, am.realizations):
        Lj = np.zeros((n, r.L.shape[1]))
        Lj[sl, :] = r.L
        L_cols.append(Lj)
    L = np.hstack(L_cols)
    n_w = L.shape[1]
    n_o = am.n_outputs
    if n_w != n_o:
        raise DimensionMismatch(
            f"square pencil required: {n_w} noise inputs vs {n_o} outputs")
    # ZOH-discretized noise input matrix
    M = np.zeros((n + n_w, n + n_w))
    M[:n, :n] = am.A_aug
    M[:n, n:] = L
    Bd = expm(M * am.dt)[:n, n:]
    P1 = np.block([[am.Ad, Bd], [am.C_aug, np.zeros((n_o, n_w))]])
    P2 = np.zeros_like(P1)
    P2[:n, :n] = np.eye(n)
    vals = eig(P1, P2, right=False)
    return vals[np.isfinite(vals)]
