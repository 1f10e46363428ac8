"""Second-order structural models, modal reduction and state-space output maps.

The model is ``M z'' + D z' + K z = Si u`` with a Boolean input shape matrix
``Si``.  Reduction projects onto mass-normalized normal modes, optionally
augmented with residual attachment modes (static flexibility left over after
truncating the modal series at the load application DOFs).  The reduced model
converts to a first-order state-space form with displacement, velocity and
acceleration outputs; only acceleration rows carry input feedthrough.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh, expm

from .errors import DimensionMismatch, SingularStiffness

__all__ = [
    "StructuralModel",
    "ReducedModel",
    "OutputSpec",
    "StateSpaceModel",
    "modal_reduce",
    "to_statespace",
    "simulate",
    "load_matrix",
    "save_matrix",
    "load_structural_model",
]

OUTPUT_KINDS = ("displacement", "velocity", "acceleration", "strain-proxy")


@dataclass(frozen=True)
class StructuralModel:
    """Second-order matrices of a linear structural system."""

    M: np.ndarray
    D: np.ndarray
    K: np.ndarray
    Si: np.ndarray

    def __post_init__(self):
        n = self.M.shape[0]
        for name in ("M", "D", "K"):
            mat = getattr(self, name)
            if mat.shape != (n, n):
                raise DimensionMismatch(f"{name} must be {n}x{n}, got {mat.shape}")
        if self.Si.ndim != 2 or self.Si.shape[0] != n:
            raise DimensionMismatch(f"Si must have {n} rows, got {self.Si.shape}")

    @property
    def n_dof(self) -> int:
        return self.M.shape[0]

    @property
    def n_i(self) -> int:
        return self.Si.shape[1]


@dataclass(frozen=True)
class ReducedModel:
    """Projection of a structural model onto a reduction basis."""

    Psi: np.ndarray
    Mr: np.ndarray
    Dr: np.ndarray
    Kr: np.ndarray
    Sr: np.ndarray
    frequencies: np.ndarray  # retained-mode natural frequencies (Hz)
    damping_ratios: np.ndarray
    n_modes: int  # number of normal modes (leading columns of Psi)

    @property
    def n_r(self) -> int:
        return self.Psi.shape[1]

    @property
    def n_dof(self) -> int:
        return self.Psi.shape[0]


@dataclass(frozen=True)
class OutputSpec:
    """One output channel: kind, DOF index (0-based) and sign/direction.

    For ``strain-proxy`` rows a user-supplied combination row over the
    physical DOFs must be given in ``row``.
    """

    kind: str
    dof: int = 0
    direction: float = 1.0
    row: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.kind!r}")
        if self.kind == "strain-proxy" and self.row is None:
            raise ValueError("strain-proxy outputs require an explicit row")

    @property
    def name(self) -> str:
        short = {"displacement": "disp", "velocity": "vel",
                 "acceleration": "acc", "strain-proxy": "strain"}[self.kind]
        return f"{short}{self.dof + 1}"


@dataclass(frozen=True)
class StateSpaceModel:
    """First-order model ``x' = A x + B u``, ``y = C x + G u`` plus noise stats."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    outputs: tuple[OutputSpec, ...]
    reduced: ReducedModel | None = None

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]


def modal_reduce(
    model: StructuralModel,
    n_k: int,
    attachment_dofs: tuple[int, ...] | list[int] = (),
) -> ReducedModel:
    """Reduce a structural model to ``n_k`` modes plus residual attachment modes.

    Solves the generalized symmetric eigenproblem ``K phi = w^2 M phi`` with
    mass-normalized modes.  For each attachment DOF the static flexibility
    residual ``K^-1 e - sum_retained phi phi^T e / w^2`` is appended to the
    basis, so static compliance at that DOF is represented exactly.
    """
    if n_k < 1 or n_k > model.n_dof:
        raise ValueError(f"n_k must be in [1, {model.n_dof}], got {n_k}")
    w2, phi = eigh(model.K, model.M)
    if w2[0] <= 1e-12 * max(w2[-1], 1.0):
        raise SingularStiffness("stiffness matrix is singular (free-free system)")
    omega = np.sqrt(w2)
    Psi_n = phi[:, :n_k]
    cols = [Psi_n]
    for dof in attachment_dofs:
        if not 0 <= dof < model.n_dof:
            raise DimensionMismatch(f"attachment dof {dof} out of range")
        e = np.zeros(model.n_dof)
        e[dof] = 1.0
        flex = np.linalg.solve(model.K, e)
        retained = Psi_n @ (Psi_n.T @ e / w2[:n_k])
        cols.append((flex - retained)[:, None])
    Psi = np.hstack(cols)
    Mr = Psi.T @ model.M @ Psi
    Dr = Psi.T @ model.D @ Psi
    Kr = Psi.T @ model.K @ Psi
    Sr = Psi.T @ model.Si
    zeta = np.diag(phi.T @ model.D @ phi)[:n_k] / (2.0 * omega[:n_k])
    return ReducedModel(
        Psi=Psi, Mr=Mr, Dr=Dr, Kr=Kr, Sr=Sr,
        frequencies=omega[:n_k] / (2.0 * np.pi),
        damping_ratios=zeta, n_modes=n_k,
    )


def to_statespace(
    red: ReducedModel,
    outputs: list[OutputSpec] | tuple[OutputSpec, ...],
    Q_diag: np.ndarray | float = 0.0,
    R_diag: np.ndarray | float = 1.0,
) -> StateSpaceModel:
    """Assemble the continuous state-space model with mixed-type outputs.

    The state is ``[p, p']``; acceleration rows are the only ones with a
    nonzero feedthrough ``G``.
    """
    n_r = red.n_r
    Minv_K = np.linalg.solve(red.Mr, red.Kr)
    Minv_D = np.linalg.solve(red.Mr, red.Dr)
    Minv_S = np.linalg.solve(red.Mr, red.Sr)
    A = np.block([
        [np.zeros((n_r, n_r)), np.eye(n_r)],
        [-Minv_K, -Minv_D],
    ])
    B = np.vstack([np.zeros_like(Minv_S), Minv_S])
    n_o = len(outputs)
    n_i = red.Sr.shape[1]
    C = np.zeros((n_o, 2 * n_r))
    G = np.zeros((n_o, n_i))
    for i, spec in enumerate(outputs):
        if spec.kind == "strain-proxy":
            row = np.asarray(spec.row, dtype=float)
            if row.shape != (red.n_dof,):
                raise DimensionMismatch(
                    f"strain-proxy row must have length {red.n_dof}, got {row.shape}")
            C[i, :n_r] = spec.direction * (row @ red.Psi)
            continue
        if not 0 <= spec.dof < red.n_dof:
            raise DimensionMismatch(f"output dof {spec.dof} out of range")
        psi_row = red.Psi[spec.dof, :]
        if spec.kind == "displacement":
            C[i, :n_r] = spec.direction * psi_row
        elif spec.kind == "velocity":
            C[i, n_r:] = spec.direction * psi_row
        else:  # acceleration
            C[i, :n_r] = spec.direction * (-psi_row @ Minv_K)
            C[i, n_r:] = spec.direction * (-psi_row @ Minv_D)
            G[i, :] = spec.direction * (psi_row @ Minv_S)
    Q = np.diag(np.broadcast_to(np.asarray(Q_diag, dtype=float), (2 * n_r,)))
    R = np.diag(np.broadcast_to(np.asarray(R_diag, dtype=float), (n_o,)))
    return StateSpaceModel(A=A, B=B, C=C, G=G, Q=Q, R=R,
                           outputs=tuple(outputs), reduced=red)


def zoh_discretize(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold pair (Ad, Bd) via one augmented matrix exponential."""
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def simulate(
    model: StateSpaceModel,
    u: np.ndarray,
    dt: float,
    x0: np.ndarray | None = None,
    noise_std: np.ndarray | float | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Propagate the model under zero-order-hold inputs.

    Parameters
    ----------
    u : ndarray, shape (N,) or (N, n_i)
        Input samples, held constant over each step.
    noise_std : float or ndarray, optional
        Per-channel measurement noise standard deviation, added to the
        outputs with the supplied ``rng``.

    Returns
    -------
    ndarray, shape (N, n_o)
        Output samples ``y_k = C x_k + G u_k`` (plus noise when requested).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    if u.shape[1] != model.n_inputs:
        raise DimensionMismatch(
            f"u must have {model.n_inputs} columns, got {u.shape[1]}")
    Ad, Bd = zoh_discretize(model.A, model.B, dt)
    n = model.n_states
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    N = u.shape[0]
    y = np.empty((N, model.n_outputs))
    for k in range(N):
        y[k] = model.C @ x + model.G @ u[k]
        x = Ad @ x + Bd @ u[k]
    if noise_std is not None:
        if rng is None:
            raise ValueError("noise_std requires an explicit rng")
        std = np.broadcast_to(np.asarray(noise_std, dtype=float), (model.n_outputs,))
        y = y + rng.standard_normal(y.shape) * std
    return y


# ---------------------------------------------------------------------------
# plain-text matrix I/O (import path for externally derived reduced models)

def load_matrix(path) -> np.ndarray:
    """Read a whitespace-delimited dense matrix file."""
    return np.atleast_2d(np.loadtxt(path, dtype=float))


def save_matrix(path, mat: np.ndarray) -> None:
    """Write a matrix as whitespace-delimited text, one row per line."""
    np.savetxt(path, np.atleast_2d(mat), fmt="%.17g")


def load_structural_model(descriptor_path) -> StructuralModel:
    """Build a structural model from a JSON descriptor naming matrix files.

    The descriptor maps the keys ``M``, ``D``, ``K`` and ``Si`` to file paths
    (relative paths resolve against the descriptor's directory).
    """
    descriptor_path = Path(descriptor_path)
    with open(descriptor_path) as fh:
        desc = json.load(fh)
    base = descriptor_path.parent
    mats = {}
    for key in ("M", "D", "K", "Si"):
        if key not in desc:
            raise KeyError(f"model descriptor missing {key!r}")
        p = Path(desc[key])
        mats[key] = load_matrix(p if p.is_absolute() else base / p)
    return StructuralModel(M=mats["M"], D=mats["D"], K=mats["K"], Si=mats["Si"])
