"""Entangled sources and the input polarization qubit.

``make_tmsv_pair`` builds the in-phase pair of two-mode squeezed vacua
(one per polarization) shared between arm A (near-infrared) and arm B
(telecom).  ``make_fwm_source`` builds the four-wave-mixing source in the
circular basis; ``apply_waveplates`` maps it onto the linear basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import (
    Arm,
    FockError,
    FockState,
    Pol,
    apply_phase_rotation,
    apply_two_mode_squeeze,
    make_vacuum,
    mode,
)

A_H, A_V = mode("A", "H"), mode("A", "V")
B_H, B_V = mode("B", "H"), mode("B", "V")
IN_H, IN_V = mode("in", "H"), mode("in", "V")
A_SP, A_SM = mode("A", "sigma_plus"), mode("A", "sigma_minus")
B_SP, B_SM = mode("B", "sigma_plus"), mode("B", "sigma_minus")

TMSV_MODES = (A_H, A_V, B_H, B_V)
FWM_MODES = (A_SP, A_SM, B_SP, B_SM)
INPUT_MODES = (IN_H, IN_V)

# circular -> linear labels applied by the waveplates on each arm
WAVEPLATE_MAP = {
    A_SP: A_H,
    A_SM: A_V,
    B_SM: B_H,
    B_SP: B_V,
}


@dataclass(frozen=True)
class SourceParams:
    r: float
    s_coefficient: float = 1.0
    phi_A: float = 0.0
    phi_B: float = 0.0
    wavelength_A: float = 780.0  # nm, metadata only
    wavelength_B: float = 1529.0  # nm, metadata only

    def __post_init__(self):
        if not (self.r >= 0 and math.isfinite(self.r)):
            raise FockError(f"squeezing factor must be finite and >= 0, got {self.r}")

    @property
    def q(self) -> float:
        return math.tanh(self.r)

    @property
    def phi(self) -> float:
        """Relative phase of the V pair; only the sum of the arm phases matters."""
        return self.phi_A + self.phi_B


@dataclass(frozen=True)
class InputQubit:
    c1: complex
    c2: complex

    def __post_init__(self):
        norm = abs(self.c1) ** 2 + abs(self.c2) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise FockError(f"input qubit must be normalized, |c1|^2+|c2|^2 = {norm!r}")

    @classmethod
    def from_bloch(cls, theta: float, phi: float) -> "InputQubit":
        return cls(math.cos(theta / 2), complex(np.exp(1j * phi) * math.sin(theta / 2)))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.c1, self.c2], dtype=complex)

    def bloch_vector(self) -> np.ndarray:
        rho = np.outer(self.vector, self.vector.conj())
        return bloch_from_block(rho)


def bloch_from_block(block: np.ndarray) -> np.ndarray:
    """Stokes vector of a 2x2 block in the basis (|1;0>, |0;1>) = (H, V).

    ``x = 2 Re rho_VH``, ``y = 2 Im rho_VH``, ``z = rho_HH - rho_VV`` after
    normalizing the block; H is +z and (H + iV)/sqrt(2) is +y.
    """
    tr = block[0, 0].real + block[1, 1].real
    if tr <= 0:
        return np.zeros(3)
    b = block / tr
    return np.array([2 * b[1, 0].real, 2 * b[1, 0].imag, (b[0, 0] - b[1, 1]).real])


def make_tmsv_pair(params: SourceParams, cutoff: int) -> FockState:
    """Two in-phase two-mode squeezed vacua over (A,H),(A,V),(B,H),(B,V).

    A nonzero ``phi_A``/``phi_B`` rotates the V modes so that the pair carries
    ``e^{i m phi}`` on ``m`` V-photon pairs, ``phi = phi_A + phi_B``.
    """
    state = make_vacuum(TMSV_MODES, cutoff)
    state = apply_two_mode_squeeze(state, A_H, B_H, params.r)
    state = apply_two_mode_squeeze(state, A_V, B_V, params.r)
    if params.phi_A:
        state = apply_phase_rotation(state, A_V, -params.phi_A)
    if params.phi_B:
        state = apply_phase_rotation(state, B_V, -params.phi_B)
    return state


def make_fwm_source(params: SourceParams, cutoff: int) -> FockState:
    """Vacuum evolved under the diamond-scheme FWM Hamiltonian.

    The two angular-momentum channels (A,sigma+)(B,sigma-) and
    (A,sigma-)(B,sigma+) commute, so the evolution is a product of two
    two-mode squeezers with strengths ``r`` and ``s*r``.  A negative ``s``
    flips the squeezing phase of the second channel.
    """
    s = params.s_coefficient
    state = make_vacuum(FWM_MODES, cutoff)
    state = apply_two_mode_squeeze(state, A_SP, B_SM, params.r)
    if s != 0:
        theta = 0.0 if s > 0 else math.pi
        state = apply_two_mode_squeeze(state, A_SM, B_SP, abs(s) * params.r, theta)
    return state


def apply_waveplates(state: FockState) -> FockState:
    """Map circular modes to linear ones: A: sigma+ -> H, sigma- -> V; B: sigma- -> H, sigma+ -> V.

    The waveplate unitary is a pure relabelling in this representation, so
    it preserves every photon-number amplitude.
    """
    circular = [m for m in state.modes if m.pol in (Pol.SIGMA_PLUS, Pol.SIGMA_MINUS)]
    if not circular:
        raise FockError("apply_waveplates needs circular-polarization modes")
    mapping = {}
    for m in circular:
        if m.arm not in (Arm.A, Arm.B):
            raise FockError(f"no waveplate defined for arm {m.arm.value}")
        target = WAVEPLATE_MAP[mode(m.arm, m.pol)]
        mapping[m] = mode(target.arm, target.pol, m.freq_bin)
    out = state.relabel(mapping)
    if len(set(out.modes)) != len(out.modes):
        raise FockError("waveplate output would duplicate a linear-polarization mode")
    return out


def make_input_qubit(q: InputQubit, cutoff: int) -> FockState:
    """``c1|1;0> + c2|0;1>`` on (in,H),(in,V)."""
    state = make_vacuum(INPUT_MODES, cutoff)
    state.amplitudes[0, 0] = 0.0
    state.amplitudes[1, 0] = q.c1
    state.amplitudes[0, 1] = q.c2
    return state
