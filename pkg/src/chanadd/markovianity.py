"""CP-divisibility and the RHP / BLP non-Markovianity quantifiers.

Maps are handled as transfer matrices.  The intermediate map from ``s`` to
``t`` is ``F(t) F(s)^-1``; it is CP iff its Choi matrix is positive.  The RHP
function is ``g(t) = (||W(t+eps, t)||_1 - 1) / eps`` and the BLP function is the
trace distance of two evolved states.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import channels as ch
from .linalg import eigvalsh, inverse, trace_norm

DEFAULT_COND_LIMIT = 1e8
DEFAULT_EPSILON = 0.1
IDEAL_ZERO_THRESHOLD = 1e-6
# rounding on exactly-CP maps leaves |g| and |lambda_min| near 1e-15; physical signals are ~1e-2
G_CLAMP = 1e-9
LAMBDA_ZERO_TOL = 1e-9
# Choi matrices of products F(t) F(s)^-1 lose exact Hermiticity at roughly eps * cond(F(s))
CHOI_HERMITICITY_TOL = 1e-6


class IllConditionedWarning(UserWarning):
    pass


class UnsortedSeriesError(ValueError):
    pass


@dataclass(frozen=True)
class IntermediateMap:
    s: float
    t: float
    F_ts: np.ndarray
    condition_of_Fs: float
    ill_conditioned: bool = False


@dataclass(frozen=True)
class GbarPoint:
    t: float
    gbar: float
    epsilon: float
    std: float = 0.0
    sem: float = 0.0
    n: int = 1
    flagged: bool = False
    n_flagged: int = 0


@dataclass(frozen=True)
class TraceDistancePoint:
    t: float
    D: float
    state_pair: str = "H,V"
    std: float = 0.0


def intermediate_map(
    F_t: np.ndarray,
    F_s: np.ndarray,
    cond_limit: float = DEFAULT_COND_LIMIT,
    s: float = math.nan,
    t: float = math.nan,
) -> IntermediateMap:
    """``F(t, s) = F(t) F(s)^-1``.

    Raises :class:`~chanadd.linalg.SingularMatrixError` when ``F(s)`` cannot be
    inverted.  A condition number above ``cond_limit`` still returns the map,
    with ``ill_conditioned`` set and an :class:`IllConditionedWarning`.
    """
    if not (math.isnan(s) or math.isnan(t)) and t < s:
        raise ValueError(f"intermediate map needs t >= s, got s={s}, t={t}")
    inv, cond = inverse(F_s)
    flagged = cond > cond_limit
    if flagged:
        warnings.warn(f"F(s) condition number {cond:.3e} exceeds {cond_limit:.1e}", IllConditionedWarning)
    return IntermediateMap(s, t, np.asarray(F_t, dtype=complex) @ inv, cond, flagged)


def intermediate_choi(F_ts: np.ndarray) -> np.ndarray:
    return ch.choi_of_transfer(F_ts)


def choi_spectrum(F_ts: np.ndarray) -> np.ndarray:
    """Ascending Choi eigenvalues; broadcasts over stacks of transfer matrices."""
    return eigvalsh(ch.choi_of_transfer(F_ts), hermiticity_tol=CHOI_HERMITICITY_TOL)


def min_choi_eigenvalue(V) -> float:
    """Smallest Choi eigenvalue of an intermediate map (negative: not CP)."""
    F = V.F_ts if isinstance(V, IntermediateMap) else V
    return choi_spectrum(F)[..., 0]


def is_non_cp(lambda_min, tol: float = LAMBDA_ZERO_TOL):
    """``lambda_min < -tol``: the intermediate map is certified not CP."""
    return np.asarray(lambda_min) < -tol


def intermediate_trace_norm(F_ts: np.ndarray) -> np.ndarray:
    return trace_norm(ch.choi_of_transfer(F_ts), hermiticity_tol=CHOI_HERMITICITY_TOL)


def _g_from_norm(norm, epsilon: float, clamp: bool):
    g = (np.asarray(norm) - 1.0) / epsilon
    if clamp:
        g = np.where(g <= G_CLAMP, 0.0, g)
    return g


def rhp_g(
    F_t: np.ndarray,
    F_te: np.ndarray,
    epsilon: float,
    cond_limit: float = DEFAULT_COND_LIMIT,
    clamp: bool = True,
) -> float:
    """Finite-``epsilon`` RHP rate ``(||W(t+eps, t)||_1 - 1) / eps``.

    Values at or below ``G_CLAMP`` (including the negative ones that rounding
    or, for reconstructed maps, trace deviations produce) are set to zero
    unless ``clamp`` is False.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    V = intermediate_map(F_te, F_t, cond_limit)
    return float(_g_from_norm(intermediate_trace_norm(V.F_ts), epsilon, clamp))


def gbar(g):
    return np.tanh(g)


def _check_sorted(times: Sequence[float]) -> None:
    if len(times) < 2:
        raise ValueError("series needs at least two points")
    if np.any(np.diff(times) <= 0):
        raise UnsortedSeriesError("series must be strictly increasing in t")


def rhp_measure(series: Sequence[GbarPoint], zero_threshold: Optional[float] = None) -> float:
    """Ratio of trapezoidal integrals of ``gbar`` and of its support indicator.

    ``zeta(g) = 0`` when ``g <= threshold`` and 1 otherwise, using
    ``zero_threshold`` if given, otherwise each point's standard error, falling
    back to ``1e-6`` for exact (single-sample) points.  Points at or below the
    threshold count as zero in the numerator too.  Flagged points are skipped.
    Returns 0 when both integrals vanish.
    """
    _check_sorted([p.t for p in series])
    pts = [p for p in series if not p.flagged]
    if len(pts) < 2:
        return 0.0
    t = np.array([p.t for p in pts])
    g = np.array([p.gbar for p in pts])
    if zero_threshold is None:
        thr = np.array([p.sem if p.n > 1 else IDEAL_ZERO_THRESHOLD for p in pts])
    else:
        thr = np.full(len(pts), zero_threshold)
    zeta = (g > thr).astype(float)
    num = np.trapezoid(g * zeta, t)
    den = np.trapezoid(zeta, t)
    if den == 0.0:
        return 0.0
    return float(num / den)


def blp_trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """Half the Euclidean distance of the two Bloch vectors."""
    d = ch.bloch_vector(rho1) - ch.bloch_vector(rho2)
    return 0.5 * np.linalg.norm(d, axis=-1)


def blp_measure(series: Sequence[TraceDistancePoint]) -> float:
    """Positive variation of ``D(t)`` along the series."""
    _check_sorted([p.t for p in series])
    D = np.array([p.D for p in series])
    return float(np.sum(np.clip(np.diff(D), 0.0, None)))
