"""Analytic qubit Pauli channels and their chi / transfer / Choi matrices.

Basis conventions, fixed everywhere in the package:

* operator basis for chi matrices: ``(I, X, Y, Z)``
* unit-matrix basis for transfer matrices and vectorisation:
  ``G1 = |H><H|, G2 = |H><V|, G3 = |V><H|, G4 = |V><V|``.  With this order
  ``vec(rho)`` is the row-major flattening of ``rho``.

Two scenarios are modelled.  ``CASE_A`` adds two Markovian dephasing channels
(X-noise and Y-noise with the same probability) with equal weights and gets a
channel that is not CP-divisible.  ``CASE_B`` adds two non-divisible X-noise
channels with weights 2/3 and 1/3 and gets the Markovian X-dephasing
semigroup.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([I2, SX, SY, SZ])

# G[alpha] = |i><j| with alpha = 2*i + j
UNIT_BASIS = np.zeros((4, 2, 2), dtype=complex)
for _a in range(4):
    UNIT_BASIS[_a, _a // 2, _a % 2] = 1.0

KET_H = np.array([1, 0], dtype=complex)
KET_V = np.array([0, 1], dtype=complex)

# E_m (x) conj(E_n), the row-major superoperator of rho -> E_m rho E_n^dagger
_SUPER_BASIS = np.einsum("mab,ncd->mnacbd", PAULIS, PAULIS.conj()).reshape(4, 4, 4, 4)

P_PLUS = np.zeros((4, 4), dtype=complex)
P_PLUS[np.ix_([0, 3], [0, 3])] = 0.5

CASE_B_WEIGHTS = (2.0 / 3.0, 1.0 / 3.0)


class NegativeTimeError(ValueError):
    pass


class Scenario(str, enum.Enum):
    CASE_A = "caseA"
    CASE_B = "caseB"


class Member(str, enum.Enum):
    CH1 = "ch1"
    CH2 = "ch2"
    TOTAL = "total"


@dataclass(frozen=True)
class ChannelModel:
    scenario: Scenario
    member: Member

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "member", Member(self.member))

    def __str__(self) -> str:
        return f"{self.scenario.value}/{self.member.value}"


ALL_MODELS = tuple(ChannelModel(s, m) for s in Scenario for m in Member)


@dataclass(frozen=True)
class PauliMixing:
    """Probabilities ``q = (q_I, q_X, q_Y, q_Z)`` of the map ``sum_i q_i s_i rho s_i``."""

    q: tuple[float, float, float, float]

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        if len(q) != 4:
            raise ValueError("PauliMixing needs four probabilities")
        if any(v < -1e-12 or v > 1 + 1e-12 for v in q) or abs(sum(q) - 1.0) > 1e-12:
            raise ValueError(f"invalid Pauli mixing probabilities {q}")
        object.__setattr__(self, "q", q)

    @classmethod
    def mix(cls, weights, mixings) -> "PauliMixing":
        q = sum(w * np.asarray(m.q) for w, m in zip(weights, mixings))
        return cls(tuple(q))

    def transfer_eigenvalues(self) -> np.ndarray:
        """Contraction factors ``(1, l_x, l_y, l_z)`` of the Bloch vector."""
        q0, q1, q2, q3 = self.q
        return np.array([1.0, q0 + q1 - q2 - q3, q0 - q1 + q2 - q3, q0 - q1 - q2 + q3])


def _check_time(t: float) -> float:
    t = float(t)
    if t < 0:
        raise NegativeTimeError(f"time must be >= 0, got {t}")
    return t


def p_semigroup(t: float) -> float:
    return (1.0 + np.exp(-t)) / 2.0


def p1_case_b(t: float) -> float:
    return 1.5 * ((1.0 + np.exp(-t)) / 2.0 - np.cos(t) ** 2 / 3.0)


def p2_case_b(t: float) -> float:
    return np.cos(t) ** 2


def probability(model: ChannelModel, t: float) -> float:
    """Probability that the identity (no-noise) branch is applied at time ``t``."""
    t = _check_time(t)
    if model.scenario is Scenario.CASE_B and model.member is Member.CH1:
        return float(p1_case_b(t))
    if model.scenario is Scenario.CASE_B and model.member is Member.CH2:
        return float(p2_case_b(t))
    return float(p_semigroup(t))


def pauli_mixing_of(model: ChannelModel, t: float) -> PauliMixing:
    p = probability(model, t)
    if model.scenario is Scenario.CASE_A:
        if model.member is Member.CH1:
            return PauliMixing((p, 1 - p, 0.0, 0.0))
        if model.member is Member.CH2:
            return PauliMixing((p, 0.0, 1 - p, 0.0))
        return PauliMixing((p, (1 - p) / 2, (1 - p) / 2, 0.0))
    return PauliMixing((p, 1 - p, 0.0, 0.0))


def apply(mix: PauliMixing, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    return sum(qi * P @ rho @ P.conj().T for qi, P in zip(mix.q, PAULIS))


def chi_of(mix: PauliMixing) -> np.ndarray:
    return np.diag(np.asarray(mix.q, dtype=complex))


def apply_chi(chi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``sum_mn chi_mn E_m rho E_n^dagger``; broadcasts over leading axes of ``chi``."""
    chi = np.asarray(chi, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    return np.einsum("...mn,mab,bc,ndc->...ad", chi, PAULIS, rho, PAULIS.conj())


def transfer_of_chi(chi: np.ndarray) -> np.ndarray:
    """Transfer matrix ``F_ab = Tr(G_a^dagger L(G_b))`` of the map described by ``chi``."""
    chi = np.asarray(chi, dtype=complex)
    return np.einsum("...mn,mnab->...ab", chi, _SUPER_BASIS)


def chi_of_transfer(F: np.ndarray) -> np.ndarray:
    """Inverse of :func:`transfer_of_chi`; the 16 superoperators are orthogonal with norm 4."""
    F = np.asarray(F, dtype=complex)
    return np.einsum("mnab,...ab->...mn", _SUPER_BASIS.conj(), F) / 4.0


def transfer_of_mixing(mix: PauliMixing) -> np.ndarray:
    return transfer_of_chi(chi_of(mix))


def choi_of_transfer(F: np.ndarray) -> np.ndarray:
    """``W = 1/2 sum_ab F_ab G_b (x) G_a``, i.e. ``(I (x) L)(P+)``."""
    F = np.asarray(F, dtype=complex)
    # (G_b (x) G_a)[2i+k, 2j+l] with b = 2i+j, a = 2k+l
    return 0.5 * F.reshape(F.shape[:-2] + (2, 2, 2, 2)).transpose(
        tuple(range(F.ndim - 2)) + tuple(F.ndim - 2 + np.array([2, 0, 3, 1]))
    ).reshape(F.shape[:-2] + (4, 4))


def transfer_of_choi(W: np.ndarray) -> np.ndarray:
    """``F_ab = 2 Tr[W (G_b^T (x) G_a^dagger)]``."""
    W = np.asarray(W, dtype=complex)
    return 2.0 * W.reshape(W.shape[:-2] + (2, 2, 2, 2)).transpose(
        tuple(range(W.ndim - 2)) + tuple(W.ndim - 2 + np.array([1, 3, 0, 2]))
    ).reshape(W.shape[:-2] + (4, 4))


def ideal_chi(model: ChannelModel, t: float) -> np.ndarray:
    return chi_of(pauli_mixing_of(model, t))


def ideal_transfer(model: ChannelModel, t: float) -> np.ndarray:
    return transfer_of_chi(ideal_chi(model, t))


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """``(x, y, z)`` with ``rho = (I + x X + y Y + z Z)/2``; broadcasts over leading axes."""
    rho = np.asarray(rho, dtype=complex)
    return np.real(np.einsum("iab,...ba->...i", PAULIS[1:], rho))


def state_from_bloch(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 0.5 * (I2 + np.einsum("...i,iab->...ab", r, PAULIS[1:]))


def ket_to_dm(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())
