"""Continuous-time state-space realizations of covariance functions.

Each supported kernel maps to an LTI SDE ``dz = F z dt + L dW`` with output
``f = H z`` whose stationary (or initial) covariance reproduces the kernel:
``k(tau) = H exp(F tau) P H^T`` for stationary families.

Realized families:

* Matern ``nu = p + 1/2``: ``(p+1)``-dimensional companion form whose
  characteristic polynomial is ``(lam + s)^(p+1)`` with ``lam = sqrt(2 nu)/l``
  (all poles at ``-lam``, critically damped).  The white-noise intensity
  ``qc`` is fixed by variance matching, ``H P_inf H^T = sigma^2``.
* Exponential: first-order companion with decay ``1/(2 l)``.
* Squared exponential: Matern with a configurable smoothness cap.
* Canonical periodic: a bank of ``J + 1`` independent undamped resonators at
  ``0, w0, ..., J w0`` with deterministic dynamics (``Qc = 0``) and initial
  variances from the truncated cosine-series expansion of the kernel.
* Product of periodic and a Matern-family kernel (quasiperiodic): Kronecker
  composition, giving damped resonators.
* Constant, linear, Wiener: degenerate one- and two-state models.
* Sums: block-diagonal stacking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, expm, solve_continuous_lyapunov

from . import kernels as K
from .errors import InvalidTruncation, NonStationary, UnrealizableKernel

__all__ = [
    "SsmRealization",
    "DiscreteSsm",
    "PeriodicExpansion",
    "periodic_expansion",
    "realize",
    "discretize",
    "stationary_covariance",
    "covariance_reconstruction",
    "dump_matrices",
]


@dataclass(frozen=True)
class SsmRealization:
    """Companion-form realization (F, L, H, Qc) of a kernel.

    ``P_init`` is the state covariance at the reference time ``t_ref``
    (stationary covariance for stationary kernels, the anchored covariance
    for Wiener/linear).  ``P_inf`` is set when the process is stationary.
    ``decay_rate`` carries ``lam = sqrt(2 nu)/l`` for Matern-family parts.
    """

    F: np.ndarray
    L: np.ndarray
    H: np.ndarray
    Qc: np.ndarray
    P_init: np.ndarray
    P_inf: np.ndarray | None = None
    decay_rate: float | None = None
    t_ref: float = 0.0

    @property
    def m(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True)
class DiscreteSsm:
    """Exact fixed-step discretization: ``z_k = Ad z_{k-1} + q``, ``q ~ N(0, Qd)``."""

    Ad: np.ndarray
    Qd: np.ndarray
    dt: float


@dataclass(frozen=True)
class PeriodicExpansion:
    """Truncated cosine-series coefficients of the canonical periodic kernel.

    ``coefficients[j]`` is the variance (signal units squared) attached to the
    ``cos(j w0 tau)`` component, ``j = 0 .. J``.
    """

    J: int
    coefficients: np.ndarray


def periodic_expansion(sigma: float, l: float, J: int) -> PeriodicExpansion:
    """Resonator variances for the canonical periodic kernel truncated at J.

    Derived from the Taylor expansion of ``exp(cos(u)/l^2)`` with powers of
    cosine rewritten as cosines of multiplied angles:

        q2[j] = sigma^2 (2 - delta_j0) / exp(l^-2)
                * sum_i (2 l^2)^(-j-2i) / ((j+i)! i!),  i = 0 .. floor((J-j)/2)
    """
    if J < 1:
        raise InvalidTruncation(f"truncation order J must be >= 1, got {J}")
    q2 = np.zeros(J + 1)
    inv2l2 = 1.0 / (2.0 * l * l)
    for j in range(J + 1):
        acc = 0.0
        for i in range((J - j) // 2 + 1):
            acc += inv2l2 ** (j + 2 * i) / (math.factorial(j + i) * math.factorial(i))
        q2[j] = (2.0 if j > 0 else 1.0) * acc / math.exp(1.0 / l**2)
    return PeriodicExpansion(J=J, coefficients=sigma**2 * q2)


def _companion_realization(lam: float, p: int, sigma: float) -> SsmRealization:
    """Matern-family companion form with poles all at ``-lam``."""
    m = p + 1
    F = np.zeros((m, m))
    if m > 1:
        F[np.arange(m - 1), np.arange(1, m)] = 1.0
    # last row from the binomial expansion of (lam + s)^m
    for k in range(m):
        F[-1, k] = -math.comb(m, k) * lam ** (m - k)
    L = np.zeros((m, 1))
    L[-1, 0] = 1.0
    H = np.zeros((1, m))
    H[0, 0] = 1.0
    # variance matching: solve the unit-intensity Lyapunov equation, then
    # scale so that H P_inf H^T equals sigma^2
    P1 = solve_continuous_lyapunov(F, -L @ L.T)
    qc = sigma**2 / float(H @ P1 @ H.T)
    P_inf = qc * P1
    P_inf = 0.5 * (P_inf + P_inf.T)
    return SsmRealization(
        F=F, L=L, H=H, Qc=np.array([[qc]]), P_init=P_inf, P_inf=P_inf, decay_rate=lam
    )


def _periodic_realization(k: K.CanonicalPeriodic, J: int) -> SsmRealization:
    exp = periodic_expansion(k.sigma, k.l, J)
    w0 = k.omega0
    blocks_F, blocks_P = [], []
    for j in range(J + 1):
        blocks_F.append(np.array([[0.0, -w0 * j], [w0 * j, 0.0]]))
        blocks_P.append(exp.coefficients[j] * np.eye(2))
    m = 2 * (J + 1)
    F = block_diag(*blocks_F)
    P = block_diag(*blocks_P)
    H = np.zeros((1, m))
    H[0, ::2] = 1.0
    return SsmRealization(
        F=F, L=np.eye(m), H=H, Qc=np.zeros((m, m)), P_init=P, P_inf=P
    )


def _quasiperiodic_realization(
    per: K.CanonicalPeriodic, damp: SsmRealization, J: int, sigma_per: float
) -> SsmRealization:
    """Kronecker composition of a Matern-family realization with resonators."""
    exp = periodic_expansion(sigma_per, per.l, J)
    w0 = per.omega0
    mq = damp.m
    Fm, Lm, Hm = damp.F, damp.L, damp.H
    qc_m = float(damp.Qc[0, 0])
    Pm = damp.P_inf
    blocks_F, blocks_L, blocks_Qc, blocks_P, rows_H = [], [], [], [], []
    for j in range(J + 1):
        Fp = np.array([[0.0, -w0 * j], [w0 * j, 0.0]])
        blocks_F.append(np.kron(Fm, np.eye(2)) + np.kron(np.eye(mq), Fp))
        blocks_L.append(np.kron(Lm, np.eye(2)))
        blocks_Qc.append(qc_m * exp.coefficients[j] * np.eye(2))
        blocks_P.append(np.kron(Pm, exp.coefficients[j] * np.eye(2)))
        rows_H.append(np.kron(Hm, np.array([[1.0, 0.0]])))
    F = block_diag(*blocks_F)
    L = block_diag(*blocks_L)
    Qc = block_diag(*blocks_Qc)
    P = block_diag(*blocks_P)
    H = np.hstack(rows_H)
    return SsmRealization(
        F=F, L=L, H=H, Qc=Qc, P_init=P, P_inf=P, decay_rate=damp.decay_rate
    )


def _matern_family(kernel: K.Kernel, nu_cap: float) -> SsmRealization | None:
    """Realize Matern-like leaves (Matern, exponential, capped SE); else None."""
    if isinstance(kernel, K.Matern):
        lam = math.sqrt(2.0 * kernel.nu) / kernel.l
        return _companion_realization(lam, kernel.p, kernel.sigma)
    if isinstance(kernel, K.Exponential):
        # exp(-tau/(2l)) is an OU process with decay rate 1/(2l)
        return _companion_realization(1.0 / (2.0 * kernel.l), 0, kernel.sigma)
    if isinstance(kernel, K.SquaredExponential):
        p = int(round(nu_cap - 0.5))
        lam = math.sqrt(2.0 * nu_cap) / kernel.l
        return _companion_realization(lam, p, kernel.sigma)
    return None


def realize(kernel: K.Kernel, *, J: int = 6, nu_cap: float = 3.5, t0: float = 0.0) -> SsmRealization:
    """Compile a kernel tree into a continuous-time state-space realization.

    Parameters
    ----------
    kernel : Kernel
        Tree of realizable nodes: Matern-family leaves, canonical periodic,
        constant, linear, Wiener, sums of realizable kernels and products of
        a periodic with a Matern-family leaf.
    J : int
        Resonator truncation order for the periodic family.
    nu_cap : float
        Half-integer smoothness used to realize squared-exponential leaves.
    t0 : float
        Reference time at which ``P_init`` of Wiener/linear parts is anchored.

    Raises
    ------
    UnrealizableKernel
        For unsupported products.
    InvalidTruncation
        If ``J < 1`` and the tree contains a periodic leaf.
    """
    r = _matern_family(kernel, nu_cap)
    if r is not None:
        return r
    if isinstance(kernel, K.CanonicalPeriodic):
        return _periodic_realization(kernel, J)
    if isinstance(kernel, K.Constant):
        s2 = np.array([[kernel.sigma**2]])
        return SsmRealization(
            F=np.zeros((1, 1)), L=np.ones((1, 1)), H=np.ones((1, 1)),
            Qc=np.zeros((1, 1)), P_init=s2, P_inf=s2, t_ref=t0,
        )
    if isinstance(kernel, K.Wiener):
        return SsmRealization(
            F=np.zeros((1, 1)), L=np.ones((1, 1)), H=np.ones((1, 1)),
            Qc=np.array([[kernel.sigma**2]]),
            P_init=np.array([[kernel.sigma**2 * t0]]), t_ref=t0,
        )
    if isinstance(kernel, K.Linear):
        F = np.array([[0.0, 1.0], [0.0, 0.0]])
        P0 = kernel.sigma**2 * np.array([[t0**2, t0], [t0, 1.0]])
        return SsmRealization(
            F=F, L=np.array([[0.0], [1.0]]), H=np.array([[1.0, 0.0]]),
            Qc=np.zeros((1, 1)), P_init=P0, t_ref=t0,
        )
    if isinstance(kernel, K.Sum):
        left = realize(kernel.left, J=J, nu_cap=nu_cap, t0=t0)
        right = realize(kernel.right, J=J, nu_cap=nu_cap, t0=t0)
        P_inf = None
        if left.P_inf is not None and right.P_inf is not None:
            P_inf = block_diag(left.P_inf, right.P_inf)
        return SsmRealization(
            F=block_diag(left.F, right.F),
            L=block_diag(left.L, right.L),
            H=np.hstack([left.H, right.H]),
            Qc=block_diag(left.Qc, right.Qc),
            P_init=block_diag(left.P_init, right.P_init),
            P_inf=P_inf,
            decay_rate=left.decay_rate or right.decay_rate,
            t_ref=t0,
        )
    if isinstance(kernel, K.Product):
        for per, other in ((kernel.left, kernel.right), (kernel.right, kernel.left)):
            if isinstance(per, K.CanonicalPeriodic):
                damp = _matern_family(other, nu_cap)
                if damp is not None:
                    if J < 1:
                        raise InvalidTruncation(f"truncation order J must be >= 1, got {J}")
                    return _quasiperiodic_realization(per, damp, J, per.sigma)
        raise UnrealizableKernel(
            "products are realizable only between a canonical periodic kernel "
            f"and a Matern-family kernel, got {type(kernel.left).__name__} * "
            f"{type(kernel.right).__name__}"
        )
    raise UnrealizableKernel(f"no state-space realization for {type(kernel).__name__}")


def discretize(r: SsmRealization, dt: float) -> DiscreteSsm:
    """Exact discretization over a fixed step.

    ``Ad = exp(F dt)``; ``Qd`` is the integral of the propagated process
    noise, evaluated with the block-augmented (matrix-fraction) exponential.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    m = r.m
    Qtilde = r.L @ r.Qc @ r.L.T
    if not Qtilde.any():
        return DiscreteSsm(Ad=expm(r.F * dt), Qd=np.zeros((m, m)), dt=dt)
    M = np.zeros((2 * m, 2 * m))
    M[:m, :m] = r.F
    M[:m, m:] = Qtilde
    M[m:, m:] = -r.F.T
    E = expm(M * dt)
    Ad = E[:m, :m]
    Qd = E[:m, m:] @ Ad.T
    return DiscreteSsm(Ad=Ad, Qd=0.5 * (Qd + Qd.T), dt=dt)


def stationary_covariance(r: SsmRealization) -> np.ndarray:
    """Steady-state covariance of the realization.

    Solves the Lyapunov equation when ``F`` is Hurwitz; otherwise falls back
    to the stored initial covariance (periodic and degenerate families).
    """
    eig = np.linalg.eigvals(r.F)
    scale = max(np.max(np.abs(eig)), 1.0)
    if np.any(eig.real > 1e-10 * scale):
        raise NonStationary("F has eigenvalues with positive real part")
    if np.all(eig.real < -1e-12 * scale):
        P = solve_continuous_lyapunov(r.F, -r.L @ r.Qc @ r.L.T)
        return 0.5 * (P + P.T)
    return r.P_init


def covariance_reconstruction(r: SsmRealization, tau: float) -> float:
    """Kernel value implied by the realization: ``H exp(F tau) P H^T``."""
    if tau < 0.0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    P = stationary_covariance(r)
    return float(r.H @ expm(r.F * tau) @ P @ r.H.T)


def dump_matrices(r: SsmRealization) -> str:
    """Diagnostic text dump (row-major, full precision) of the realization."""
    parts = []
    for name in ("F", "L", "H", "Qc", "P_init"):
        mat = getattr(r, name)
        parts.append(name)
        parts.extend(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(mat))
    return "\n".join(parts) + "\n"
