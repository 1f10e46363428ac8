"""Estimation-quality metrics for time series comparisons.

NRMSE normalizes the RMS error by the reference RMS; TRAC and FRAC are the
squared-cosine assurance criteria on time histories and one-sided magnitude
spectra; SE/SD summarize static-load estimates (bias over the hold window,
oscillation after release).
"""

from __future__ import annotations

import numpy as np

from .errors import WindowTooShort, ZeroReference

__all__ = ["nrmse", "trac", "frac", "static_errors"]


def _pair(estimate, truth) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(estimate, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {t.shape}")
    return e, t


def nrmse(estimate, truth) -> float:
    """RMS error of the estimate normalized by the reference RMS."""
    e, t = _pair(estimate, truth)
    ref = np.sqrt(np.mean(t**2))
    if ref == 0.0:
        raise ZeroReference("reference signal has zero RMS")
    return float(np.sqrt(np.mean((e - t) ** 2)) / ref)


def _squared_cosine(x: np.ndarray, y: np.ndarray) -> float:
    xx = float(x @ x)
    yy = float(y @ y)
    if xx == 0.0 or yy == 0.0:
        raise ZeroReference("signal with zero norm")
    return float((x @ y) ** 2 / (xx * yy))


def trac(estimate, truth) -> float:
    """Time response assurance criterion: ``(x'y)^2 / (x'x y'y)`` in [0, 1]."""
    e, t = _pair(estimate, truth)
    return _squared_cosine(e, t)


def frac(estimate, truth, dt: float = 1.0,
         band: tuple[float, float] | None = None) -> float:
    """Frequency response assurance criterion on one-sided magnitude spectra.

    With ``band = (f_lo, f_hi)`` only bins with ``f_lo < f <= f_hi`` enter
    the comparison; by default all bins are used.
    """
    e, t = _pair(estimate, truth)
    Se = np.abs(np.fft.rfft(e))
    St = np.abs(np.fft.rfft(t))
    if band is not None:
        f = np.fft.rfftfreq(len(e), dt)
        mask = (f > band[0]) & (f <= band[1])
        if not mask.any():
            raise ZeroReference("analysis band contains no spectral bins")
        Se, St = Se[mask], St[mask]
    return _squared_cosine(Se, St)


def static_errors(estimate, true_static: float, release_index: int) -> tuple[float, float]:
    """Static error and post-release scatter of an estimated force history.

    ``SE`` is the absolute bias of the pre-release mean against the true
    static value; ``SD`` is the standard deviation after release.
    """
    e = np.asarray(estimate, dtype=float).ravel()
    if not 0 < release_index < len(e):
        raise WindowTooShort(
            f"release index {release_index} leaves an empty window for {len(e)} samples")
    se = abs(true_static - float(np.mean(e[:release_index])))
    sd = float(np.std(e[release_index:]))
    return se, sd
