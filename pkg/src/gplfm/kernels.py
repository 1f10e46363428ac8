"""Covariance functions for one-dimensional Gaussian-process priors.

Kernels are immutable algebraic objects: leaves carry their own
hyperparameters and can be combined with ``+`` and ``*`` to form sum and
product kernels.  Every kernel evaluates pointwise via ``k(t, tp)`` and
builds Gram matrices via ``k.gram(times)``; evaluation broadcasts over
numpy arrays.

The half-integer Matern family is the workhorse: ``nu = p + 1/2`` gives a
closed form (decaying exponential times an order-``p`` polynomial) that the
state-space backend can realize exactly.  The standalone exponential kernel
uses the ``exp(-tau / (2 l))`` convention, which differs from Matern
``nu = 1/2`` (``exp(-tau / l)``); both are provided as distinct leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import KernelDomainError

__all__ = [
    "Kernel",
    "SquaredExponential",
    "Exponential",
    "Matern",
    "CanonicalPeriodic",
    "Constant",
    "Linear",
    "Wiener",
    "Sum",
    "Product",
    "matern_half_integer",
    "gram",
    "kernel_to_dict",
    "kernel_from_dict",
    "free_parameters",
    "with_parameters",
    "biased_quasiperiodic",
]

# Leaf fields that hyperparameter training may adjust (nu is structural).
_TRAINABLE_FIELDS = ("sigma", "l", "t_period")


def _check_positive(name: str, value: float) -> None:
    if not (value > 0.0) or not math.isfinite(value):
        raise ValueError(f"{name} must be a positive finite real, got {value!r}")


def matern_half_integer(p: int, sigma: float, l: float, tau) -> float | np.ndarray:
    """Closed-form Matern covariance at ``nu = p + 1/2``.

    Evaluates ``sigma^2 exp(-sqrt(2 nu) tau / l)`` times the order-``p``
    polynomial with coefficients ``(p+i)! / (i! (p-i)!)`` in
    ``2 sqrt(2 nu) tau / l``, normalized by ``Gamma(p+1)/Gamma(2p+1)``.

    Parameters
    ----------
    p : int
        Polynomial order, ``p >= 0``; the smoothness is ``nu = p + 1/2``.
    sigma, l : float
        Magnitude scale and length scale (both positive).
    tau : float or ndarray
        Non-negative lag ``|t - t'|``; broadcasts over arrays.
    """
    if p < 0:
        raise ValueError(f"p must be >= 0, got {p}")
    _check_positive("sigma", sigma)
    _check_positive("l", l)
    nu = p + 0.5
    u = np.sqrt(2.0 * nu) * np.abs(tau) / l
    poly = np.zeros_like(np.asarray(u, dtype=float))
    for i in range(p + 1):
        coeff = math.factorial(p + i) / (math.factorial(i) * math.factorial(p - i))
        poly = poly + coeff * (2.0 * u) ** (p - i)
    scale = math.gamma(p + 1) / math.gamma(2 * p + 1)
    return sigma**2 * scale * np.exp(-u) * poly


@dataclass(frozen=True)
class Kernel:
    """Base class for covariance functions k(t, t')."""

    def __call__(self, t, tp):
        """Evaluate k(t, t'); symmetric in its arguments."""
        return self._eval(np.asarray(t, dtype=float), np.asarray(tp, dtype=float))

    def _eval(self, t, tp):
        raise NotImplementedError

    def gram(self, times) -> np.ndarray:
        """Gram matrix with entry (i, j) = k(times[i], times[j])."""
        t = np.asarray(times, dtype=float).ravel()
        return np.asarray(self._eval(t[:, None], t[None, :]), dtype=float)

    def __add__(self, other: "Kernel") -> "Sum":
        return Sum(self, other)

    def __mul__(self, other: "Kernel") -> "Product":
        return Product(self, other)

    @property
    def stationary(self) -> bool:
        return True


def gram(kernel: Kernel, times) -> np.ndarray:
    """Functional alias for :meth:`Kernel.gram`."""
    return kernel.gram(times)


@dataclass(frozen=True)
class SquaredExponential(Kernel):
    """Gaussian kernel ``sigma^2 exp(-tau^2 / (2 l^2))``; infinitely smooth."""

    sigma: float
    l: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)
        _check_positive("l", self.l)

    def _eval(self, t, tp):
        tau = np.abs(t - tp)
        return self.sigma**2 * np.exp(-0.5 * (tau / self.l) ** 2)


@dataclass(frozen=True)
class Exponential(Kernel):
    """Exponential kernel ``sigma^2 exp(-tau / (2 l))``.

    Continuous but not differentiable sample paths.  Note the ``1/(2l)``
    decay rate; the Matern ``nu = 1/2`` leaf decays at ``1/l`` instead.
    """

    sigma: float
    l: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)
        _check_positive("l", self.l)

    def _eval(self, t, tp):
        return self.sigma**2 * np.exp(-np.abs(t - tp) / (2.0 * self.l))


@dataclass(frozen=True)
class Matern(Kernel):
    """Matern kernel with half-integer smoothness ``nu = p + 1/2``."""

    sigma: float
    l: float
    nu: float = 1.5

    def __post_init__(self):
        _check_positive("sigma", self.sigma)
        _check_positive("l", self.l)
        p = self.nu - 0.5
        if p < 0 or abs(p - round(p)) > 1e-12:
            raise ValueError(f"nu must be a positive half-integer, got {self.nu}")

    @property
    def p(self) -> int:
        return int(round(self.nu - 0.5))

    def _eval(self, t, tp):
        return matern_half_integer(self.p, self.sigma, self.l, np.abs(t - tp))


@dataclass(frozen=True)
class CanonicalPeriodic(Kernel):
    """Canonical periodic kernel ``sigma^2 exp(-2 sin^2(w0 tau / 2) / l^2)``.

    ``w0 = 2 pi / t_period``; a squared exponential in the sinusoidally
    warped input space.
    """

    sigma: float
    l: float
    t_period: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)
        _check_positive("l", self.l)
        _check_positive("t_period", self.t_period)

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi / self.t_period

    def _eval(self, t, tp):
        s = np.sin(0.5 * self.omega0 * np.abs(t - tp))
        return self.sigma**2 * np.exp(-2.0 * s**2 / self.l**2)


@dataclass(frozen=True)
class Constant(Kernel):
    """Constant kernel ``sigma^2``; models a random bias."""

    sigma: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)

    def _eval(self, t, tp):
        return np.broadcast_to(self.sigma**2, np.broadcast_shapes(t.shape, tp.shape)).copy()


@dataclass(frozen=True)
class Linear(Kernel):
    """Linear kernel ``sigma^2 t t'`` for t, t' >= 0; models a random slope."""

    sigma: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)

    def _eval(self, t, tp):
        if np.any(t < 0.0) or np.any(tp < 0.0):
            raise KernelDomainError("Linear kernel requires non-negative times")
        return self.sigma**2 * t * tp

    @property
    def stationary(self) -> bool:
        return False


@dataclass(frozen=True)
class Wiener(Kernel):
    """Brownian-motion kernel ``sigma^2 min(t, t')`` for t, t' >= 0."""

    sigma: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)

    def _eval(self, t, tp):
        if np.any(t < 0.0) or np.any(tp < 0.0):
            raise KernelDomainError("Wiener kernel requires non-negative times")
        return self.sigma**2 * np.minimum(t, tp)

    @property
    def stationary(self) -> bool:
        return False


@dataclass(frozen=True)
class Sum(Kernel):
    """Sum of two kernels."""

    left: Kernel
    right: Kernel

    def _eval(self, t, tp):
        return self.left._eval(t, tp) + self.right._eval(t, tp)

    @property
    def stationary(self) -> bool:
        return self.left.stationary and self.right.stationary


@dataclass(frozen=True)
class Product(Kernel):
    """Product of two kernels."""

    left: Kernel
    right: Kernel

    def _eval(self, t, tp):
        return self.left._eval(t, tp) * self.right._eval(t, tp)

    @property
    def stationary(self) -> bool:
        return self.left.stationary and self.right.stationary


def biased_quasiperiodic(
    sigma: float,
    l: float,
    t_period: float,
    l_matern: float,
    sigma_constant: float,
    nu: float = 1.5,
) -> Kernel:
    """Constant bias plus a periodic-times-Matern (quasiperiodic) kernel.

    The Matern factor carries unit magnitude so the quasiperiodic variance
    is controlled by ``sigma`` alone.
    """
    quasi = CanonicalPeriodic(sigma, l, t_period) * Matern(1.0, l_matern, nu)
    return Constant(sigma_constant) + quasi


# ---------------------------------------------------------------------------
# serialization

_LEAF_TYPES = {
    "squared_exponential": SquaredExponential,
    "exponential": Exponential,
    "matern": Matern,
    "canonical_periodic": CanonicalPeriodic,
    "constant": Constant,
    "linear": Linear,
    "wiener": Wiener,
}
_TYPE_NAMES = {cls: name for name, cls in _LEAF_TYPES.items()}


def kernel_to_dict(kernel: Kernel) -> dict:
    """Serialize a kernel tree to plain dicts (JSON-compatible)."""
    if isinstance(kernel, Sum):
        return {"type": "sum", "children": [kernel_to_dict(kernel.left), kernel_to_dict(kernel.right)]}
    if isinstance(kernel, Product):
        return {"type": "product", "children": [kernel_to_dict(kernel.left), kernel_to_dict(kernel.right)]}
    d = {"type": _TYPE_NAMES[type(kernel)]}
    for f in fields(kernel):
        d[f.name] = getattr(kernel, f.name)
    return d


def kernel_from_dict(d: dict) -> Kernel:
    """Rebuild a kernel tree from :func:`kernel_to_dict` output."""
    kind = d["type"]
    if kind in ("sum", "product"):
        children = d["children"]
        if len(children) != 2:
            raise ValueError(f"{kind} kernel requires exactly 2 children")
        left, right = (kernel_from_dict(c) for c in children)
        return Sum(left, right) if kind == "sum" else Product(left, right)
    try:
        cls = _LEAF_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown kernel type {kind!r}") from None
    kwargs = {f.name: d[f.name] for f in fields(cls) if f.name in d}
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# hyperparameter access for training

def free_parameters(kernel: Kernel, frozen: set[str] | frozenset[str] = frozenset()):
    """List trainable hyperparameters as ``(path, value)`` pairs.

    Paths are dotted: leaf fields are bare names (``"sigma"``), composite
    children are indexed (``"0.sigma"``, ``"1.1.l"``).  A parameter is
    skipped when its full path or bare field name appears in ``frozen``.
    """
    out: list[tuple[str, float]] = []

    def walk(k: Kernel, prefix: str):
        if isinstance(k, (Sum, Product)):
            walk(k.left, prefix + "0.")
            walk(k.right, prefix + "1.")
            return
        for f in fields(k):
            if f.name not in _TRAINABLE_FIELDS:
                continue
            path = prefix + f.name
            if path in frozen or f.name in frozen:
                continue
            out.append((path, float(getattr(k, f.name))))

    walk(kernel, "")
    return out


def with_parameters(kernel: Kernel, updates: dict[str, float]) -> Kernel:
    """Return a copy of the kernel tree with dotted-path parameters replaced."""

    def walk(k: Kernel, prefix: str) -> Kernel:
        if isinstance(k, (Sum, Product)):
            left = walk(k.left, prefix + "0.")
            right = walk(k.right, prefix + "1.")
            return type(k)(left, right)
        changes = {}
        for f in fields(k):
            path = prefix + f.name
            if path in updates:
                changes[f.name] = updates[path]
        return replace(k, **changes) if changes else k

    unknown = set(updates) - {p for p, _ in free_parameters(kernel)}
    if unknown:
        raise KeyError(f"unknown parameter paths: {sorted(unknown)}")
    return walk(kernel, "")
