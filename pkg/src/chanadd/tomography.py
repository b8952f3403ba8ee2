"""Simulated polarisation tomography and chi-matrix reconstruction.

Each probe state goes through the channel and the output is measured with the
six Pauli projectors ``H, V, D, A, R, L``, each for ``N`` shots.  Counts are
Poisson with mean ``N * p``.  States are reconstructed by linear inversion or
by maximising the Poisson likelihood; processes by combining the four probe
outputs linearly, projecting onto PSD trace-1 chi matrices and refining with
the joint likelihood of all 24 counts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import channels as ch
from .linalg import NotPSDError, dagger, eigvalsh, project_psd_trace, psd_sqrt

PROBE_NAMES = ("H", "V", "+", "+y")
PROBE_KETS = np.array(
    [[1, 0], [0, 1], [1 / np.sqrt(2), 1 / np.sqrt(2)], [1 / np.sqrt(2), 1j / np.sqrt(2)]],
    dtype=complex,
)
PROBES = np.array([ch.ket_to_dm(k) for k in PROBE_KETS])

PROJECTOR_NAMES = ("H", "V", "D", "A", "R", "L")
_s = 1 / np.sqrt(2)
PROJECTOR_KETS = np.array(
    [[1, 0], [0, 1], [_s, _s], [_s, -_s], [_s, 1j * _s], [_s, -1j * _s]], dtype=complex
)
PROJECTORS = np.array([ch.ket_to_dm(k) for k in PROJECTOR_KETS])

DEFAULT_SHOTS = 10_000
MAX_ITER = 20_000
PARAM_STEP_TOL = 1e-9
LIKELIHOOD_STEP_TOL = 1e-10
MAX_RESTARTS = 10


class InvalidStateError(ValueError):
    pass


class EmptyPairError(ValueError):
    pass


@dataclass(frozen=True)
class CountTable:
    """Counts for the projectors ``H, V, D, A, R, L`` with ``shots`` trials each."""

    counts: np.ndarray
    shots: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (6,):
            raise ValueError(f"need six counts, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if int(self.shots) <= 0:
            raise ValueError("shots must be positive")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "shots", int(self.shots))


@dataclass
class ReconstructionResult:
    estimate: np.ndarray
    log_likelihood: float = 0.0
    iterations: int = 0
    converged: bool = True
    counts: Optional[tuple] = field(default=None, repr=False)


def _validate_state(rho: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise InvalidStateError(f"expected 2x2 density matrix, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol or abs(np.trace(rho) - 1) > tol:
        raise InvalidStateError("density matrix must be Hermitian with unit trace")
    if eigvalsh(rho, hermiticity_tol=tol)[0] < -tol:
        raise InvalidStateError("density matrix is not positive semidefinite")
    return rho


def outcome_probabilities(rho: np.ndarray) -> np.ndarray:
    """Born-rule probabilities for ``H, V, D, A, R, L``."""
    rho = _validate_state(rho)
    p = np.real(np.einsum("jab,ba->j", PROJECTORS, rho))
    return np.clip(p, 0.0, 1.0)


def simulate_counts(probabilities, shots: int, rng_seed) -> CountTable:
    """Independent Poisson counts with means ``shots * p``.

    ``rng_seed`` is anything :func:`numpy.random.default_rng` accepts; the same
    seed always gives the same table.
    """
    p = np.asarray(probabilities, dtype=float)
    if p.shape != (6,) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("need six probabilities in [0, 1]")
    if shots <= 0:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng(rng_seed)
    return CountTable(rng.poisson(shots * p), shots)


def sample_shot_channel(mix: ch.PauliMixing, rng: np.random.Generator, size=None):
    """Draw which Pauli (0=I, 1=X, 2=Y, 3=Z) acts on a photon."""
    q = np.clip(np.asarray(mix.q), 0.0, None)
    return rng.choice(4, size=size, p=q / q.sum())


def simulate_counts_per_shot(
    rho_in: np.ndarray, mixings, weights, shots: int, rng: np.random.Generator
) -> CountTable:
    """Shot-by-shot version of :func:`simulate_counts`.

    For every projector the number of photons sent is Poisson(``shots``).  Each
    photon picks a path according to ``weights`` and then a Pauli error from
    that path's mixing; it is detected with the Born probability of the
    resulting pure output.  Thinning a Poisson stream keeps it Poisson, so the
    counts have the same law as the probability-level simulation.
    """
    weights = np.asarray(weights, dtype=float)
    rho_in = np.asarray(rho_in, dtype=complex)
    # detection probability for (pauli, projector)
    outs = np.einsum("iab,bc,idc->iad", ch.PAULIS, rho_in, ch.PAULIS.conj())
    det = np.clip(np.real(np.einsum("jab,iba->ij", PROJECTORS, outs)), 0.0, 1.0)
    counts = np.empty(6, dtype=np.int64)
    for j in range(6):
        n = rng.poisson(shots)
        path = rng.choice(len(weights), size=n, p=weights / weights.sum())
        pauli = np.empty(n, dtype=np.int64)
        for k, mix in enumerate(mixings):
            sel = path == k
            pauli[sel] = sample_shot_channel(mix, rng, size=int(sel.sum()))
        counts[j] = int(np.count_nonzero(rng.random(n) < det[pauli, j]))
    return CountTable(counts, shots)


def _pair_bloch(counts: CountTable) -> np.ndarray:
    n = counts.counts.astype(float)
    plus, minus = n[0::2], n[1::2]
    tot = plus + minus
    if np.any(tot <= 0):
        raise EmptyPairError("an opposite projector pair has no counts")
    # H/V pair measures z, D/A measures x, R/L measures y
    rz, rx, ry = (plus - minus) / tot
    return np.array([rx, ry, rz])


def _clip_state(rho: np.ndarray) -> np.ndarray:
    return project_psd_trace(rho, 1.0)


def linear_inversion_state(counts: CountTable) -> np.ndarray:
    rho = ch.state_from_bloch(_pair_bloch(counts))
    if eigvalsh(rho)[0] < 0:
        rho = _clip_state(rho)
    return rho


def log_likelihood(counts: np.ndarray, means: np.ndarray) -> float:
    """Poisson log-likelihood ``sum n ln(mu) - mu`` up to the ``ln n!`` constant."""
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    pos = counts > 0
    return float(np.sum(counts[pos] * np.log(np.maximum(means[pos], 1e-300))) - np.sum(means))


def _deviance(counts: np.ndarray, means: np.ndarray) -> float:
    # sum mu - n - n ln(mu/n): same optimum as the log-likelihood, zero for a perfect fit
    pos = counts > 0
    m = np.maximum(means, 1e-300)
    return float(np.sum(m) - np.sum(counts) - np.sum(counts[pos] * np.log(m[pos] / counts[pos])))


# --- triangular parameterisation, rho = T T^dagger / Tr(T T^dagger) -------------------


def _tri_indices(d: int):
    diag = [(a, a) for a in range(d)]
    off = [(a, b) for a in range(d) for b in range(a)]
    return diag, off


def _params_to_tri(x: np.ndarray, d: int) -> np.ndarray:
    diag, off = _tri_indices(d)
    T = np.zeros((d, d), dtype=complex)
    for k, (a, b) in enumerate(diag):
        T[a, b] = x[k]
    for k, (a, b) in enumerate(off):
        T[a, b] = x[d + 2 * k] + 1j * x[d + 2 * k + 1]
    return T


def _tri_to_params(T: np.ndarray) -> np.ndarray:
    d = T.shape[0]
    diag, off = _tri_indices(d)
    x = [T[a, b].real for a, b in diag]
    for a, b in off:
        x += [T[a, b].real, T[a, b].imag]
    return np.array(x)


def _start_params(rho: np.ndarray, mix: float) -> np.ndarray:
    d = rho.shape[0]
    rho = (1 - mix) * rho + mix * np.eye(d) / d
    return _tri_to_params(np.linalg.cholesky(0.5 * (rho + rho.conj().T)))


def _unpack(x: np.ndarray, d: int):
    T = _params_to_tri(x, d)
    M = T @ T.conj().T
    tau = np.trace(M).real
    return T, M / tau, tau


def _design_probs(design: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("jnm,mn->j", design, X))


def objective(x: np.ndarray, design: np.ndarray, n: np.ndarray, shots: np.ndarray):
    """Deviance of the counts at ``X(x)`` plus ``(tau - 1)^2``, and its gradient.

    The penalty pins the otherwise free overall scale ``tau = Tr(T T^dagger)``
    without moving ``X``.
    """
    d = design.shape[-1]
    T, X, tau = _unpack(x, d)
    p = _design_probs(design, X)
    f = _deviance(n, shots * p) + (tau - 1.0) ** 2
    w = shots - n / np.maximum(p, 1e-300)
    G = np.einsum("j,jnm->nm", w, design)
    G = 0.5 * (G + G.conj().T)
    c = np.real(np.trace(G @ X))
    K = T.conj().T @ (G - c * np.eye(d)) / tau + 2.0 * (tau - 1.0) * T.conj().T
    # df = 2 Re sum_ab K_ba dT_ab
    return f, _tri_to_params(2.0 * (K.T.real - 1j * K.T.imag))


def _fit_triangular(design: np.ndarray, n: np.ndarray, shots: np.ndarray, start: np.ndarray, method: str):
    """Maximise the Poisson likelihood of ``n`` over ``X = T T^dagger / Tr(T T^dagger)``.

    ``design[j]`` gives the outcome probabilities as ``Tr(design[j] X)``.
    Returns ``(X, log_likelihood, iterations, converged)``.
    """
    d = design.shape[-1]

    def fun(x):
        return objective(x, design, n, shots)[0]

    def fun_grad(x):
        return objective(x, design, n, shots)

    x0 = _start_params(start, 1e-3)
    x0 /= np.linalg.norm(x0)
    if method == "simplex":
        opts = dict(xatol=PARAM_STEP_TOL, fatol=LIKELIHOOD_STEP_TOL, maxiter=MAX_ITER, maxfev=4 * MAX_ITER)
        res = minimize(fun, x0, method="Nelder-Mead", options=opts)
        nit = res.nit
        # one restart from the best vertex guards against a collapsed simplex
        res = minimize(fun, res.x, method="Nelder-Mead", options=opts)
        nit += res.nit
        converged = bool(res.success)
    elif method == "lbfgs":
        opts = dict(maxiter=MAX_ITER, ftol=1e-14, gtol=1e-10, maxcor=20)
        res = minimize(fun_grad, x0, jac=True, method="L-BFGS-B", options=opts)
        nit = res.nit
        converged = False
        # restarts with a fresh curvature model until the likelihood stops moving
        for _ in range(MAX_RESTARTS):
            nxt = minimize(fun_grad, res.x, jac=True, method="L-BFGS-B", options=opts)
            nit += nxt.nit
            step = np.max(np.abs(nxt.x - res.x))
            df = abs(res.fun - nxt.fun)
            if nxt.fun <= res.fun:
                res = nxt
            if step < PARAM_STEP_TOL or df < LIKELIHOOD_STEP_TOL:
                converged = True
                break
    else:
        raise ValueError(f"unknown optimizer {method!r}")
    X = _unpack(res.x, d)[1]
    X = 0.5 * (X + X.conj().T)
    return X, log_likelihood(n, shots * _design_probs(design, X)), int(nit), converged


def mle_state(counts: CountTable, method: str = "lbfgs") -> ReconstructionResult:
    """Maximum-likelihood qubit state from six-projector counts.

    With every projector measured for the same number of shots the likelihood
    separates into one term per opposite pair, each maximised by the linear
    inversion Bloch component.  If that point lies strictly inside the Bloch
    ball it is the constrained optimum too and is returned directly.
    Otherwise the likelihood is maximised numerically over the triangular
    factor, with ``method`` either ``"lbfgs"`` or ``"simplex"``.
    """
    n = counts.counts.astype(float)
    shots = np.full(6, float(counts.shots))
    r = _pair_bloch(counts)
    if np.linalg.norm(r) < 1.0 - 1e-12:
        rho = ch.state_from_bloch(r)
        ll = log_likelihood(n, shots * np.real(np.einsum("jab,ba->j", PROJECTORS, rho)))
        return ReconstructionResult(rho, ll, 0, True, counts=(counts,))
    rho, ll, nit, ok = _fit_triangular(PROJECTORS, n, shots, linear_inversion_state(counts), method)
    return ReconstructionResult(rho, ll, nit, ok, counts=(counts,))


def exact_result(rho: np.ndarray) -> ReconstructionResult:
    """Wrap a noiseless output state so it can feed :func:`process_tomography`."""
    return ReconstructionResult(np.asarray(rho, dtype=complex))


# --- process tomography --------------------------------------------------------------


def _build_design() -> np.ndarray:
    # M[k, j, m, n] = Tr(P_j E_m rho_k E_n^dagger); Tr(B chi) needs B[n, m] = M[m, n]
    M = np.einsum("jab,mbc,kcd,nda->kjmn", PROJECTORS, ch.PAULIS, PROBES, dagger(ch.PAULIS))
    return np.swapaxes(M, -1, -2).reshape(24, 4, 4)


PROCESS_DESIGN = _build_design()


def process_probabilities(chi: np.ndarray) -> np.ndarray:
    """Predicted outcome probabilities, shape ``(4 probes, 6 projectors)``."""
    return np.real(np.einsum("jnm,...mn->...j", PROCESS_DESIGN, chi)).reshape(np.shape(chi)[:-2] + (4, 6))


def outputs_to_transfer(outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Transfer matrix from the outputs of the probes ``H, V, +, +y``."""
    rH, rV, rP, rY = (np.asarray(o, dtype=complex) for o in outputs)
    g2 = rP + 1j * rY - 0.5 * (1 + 1j) * (rH + rV)
    images = [rH, g2, g2.conj().T, rV]
    return np.stack([img.reshape(4) for img in images], axis=1)


def process_tomography(
    outputs: Sequence[ReconstructionResult], refine: bool = True, method: str = "lbfgs"
) -> ReconstructionResult:
    """Reconstruct the chi matrix from the four probe-output reconstructions.

    ``outputs`` must be in probe order ``H, V, +, +y``.  The linear estimate is
    projected onto PSD trace-1 matrices.  If every output carries its count
    table and ``refine`` is set, the Poisson likelihood of all 24 counts is
    then maximised over ``chi = T T^dagger / Tr(T T^dagger)``, starting from
    the projection.
    """
    if len(outputs) != 4:
        raise ValueError("need outputs for the four probes H, V, +, +y")
    F = outputs_to_transfer([o.estimate for o in outputs])
    chi = ch.chi_of_transfer(F)
    chi = project_psd_trace(0.5 * (chi + chi.conj().T), 1.0)
    converged = all(o.converged for o in outputs)
    iterations = sum(o.iterations for o in outputs)
    tables = [o.counts[0] if o.counts else None for o in outputs]
    if not (refine and all(t is not None for t in tables)):
        return ReconstructionResult(chi, 0.0, iterations, converged)
    n = np.concatenate([t.counts for t in tables]).astype(float)
    shots = np.repeat([t.shots for t in tables], 6).astype(float)
    chi, ll, nit, ok = _fit_triangular(PROCESS_DESIGN, n, shots, chi, method)
    return ReconstructionResult(chi, ll, iterations + nit, converged and ok, counts=tuple(tables))


def process_fidelity(chi: np.ndarray, chi_id: np.ndarray) -> float:
    """``(Tr sqrt(sqrt(chi) chi_id sqrt(chi)))^2 / (Tr chi Tr chi_id)``."""
    chi = np.asarray(chi, dtype=complex)
    chi_id = np.asarray(chi_id, dtype=complex)
    for m in (chi, chi_id):
        if eigvalsh(m)[0] < -1e-10:
            raise NotPSDError("process fidelity needs PSD chi matrices")
    root = psd_sqrt(chi)
    inner = root @ chi_id @ root
    inner = 0.5 * (inner + inner.conj().T)
    val = np.real(np.trace(psd_sqrt(inner))) ** 2 / (np.trace(chi).real * np.trace(chi_id).real)
    return float(val)


def reconstruct_channel(tables: Sequence[CountTable], method: str = "lbfgs") -> ReconstructionResult:
    """Counts for the four probes to chi: state MLE per probe, then process tomography."""
    return process_tomography([mle_state(t, method) for t in tables], refine=True, method=method)


def probe_output_probabilities(chi: np.ndarray) -> np.ndarray:
    """Exact ``(4, 6)`` outcome probabilities of the probes under ``chi``."""
    return np.clip(process_probabilities(chi), 0.0, 1.0)
