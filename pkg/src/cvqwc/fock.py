"""Multimode truncated Fock-space states and Gaussian unitaries.

States are dense complex tensors with one axis per mode and a shared
per-mode photon-number cutoff.  Every operation returns a new state.
Norm that falls outside the truncated basis is accumulated in
``FockState.leakage`` so callers can check whether a cutoff was adequate.

Conventions used throughout the package:

* quadratures ``x = (a + a^dag)/sqrt(2)``, ``p = i(a^dag - a)/sqrt(2)``;
  the vacuum variance of each is 1/2.
* ``D(alpha) = exp(alpha a^dag - alpha^* a)``.
* two-mode squeezing ``S(r, theta) = exp(r e^{i theta} a^dag b^dag - h.c.)``.
* beam splitter ``U = exp(i t (e^{i phase} a^dag b + e^{-i phase} a b^dag))``
  with ``cos(t)^2`` the transmittance.  Creation operators map as
  ``a^dag -> sqrt(T) a^dag + i e^{-i phase} sqrt(1-T) b^dag`` and
  ``b^dag -> sqrt(T) b^dag + i e^{i phase} sqrt(1-T) a^dag``; at
  ``phase=0`` each reflection carries a factor ``i``.
* phase rotation multiplies the amplitude of ``n`` photons by ``e^{-i n phi}``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln


class FockError(ValueError):
    """Invalid mode bookkeeping or parameters for a Fock-space operation."""


class Arm(str, enum.Enum):
    IN = "in"
    A = "A"
    B = "B"
    OUT = "out"
    ANC = "anc"
    # output ports of the half beam splitter that mixes the input with arm A
    PLUS = "plus"
    MINUS = "minus"


class Pol(str, enum.Enum):
    H = "H"
    V = "V"
    SIGMA_PLUS = "sigma_plus"
    SIGMA_MINUS = "sigma_minus"


@dataclass(frozen=True)
class ModeLabel:
    arm: Arm
    pol: Pol
    freq_bin: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "arm", Arm(self.arm))
        object.__setattr__(self, "pol", Pol(self.pol))

    def __str__(self):
        s = f"{self.arm.value},{self.pol.value}"
        if self.freq_bin is not None:
            s += f",{self.freq_bin:+d}"
        return f"({s})"

    def relabel(self, arm=None, pol=None) -> "ModeLabel":
        return ModeLabel(arm if arm is not None else self.arm,
                         pol if pol is not None else self.pol,
                         self.freq_bin)


def mode(arm, pol, freq_bin=None) -> ModeLabel:
    return ModeLabel(Arm(arm), Pol(pol), freq_bin)


def _check_modes(modes: Sequence[ModeLabel]) -> tuple[ModeLabel, ...]:
    modes = tuple(modes)
    if not modes:
        raise FockError("a state needs at least one mode")
    for m in modes:
        if not isinstance(m, ModeLabel):
            raise FockError(f"not a ModeLabel: {m!r}")
    if len(set(modes)) != len(modes):
        raise FockError(f"duplicate mode labels in {[str(m) for m in modes]}")
    return modes


# ---------------------------------------------------------------------------
# Matrix elements
# ---------------------------------------------------------------------------


def displacement_matrix(alpha, rows: int, cols: int | None = None) -> np.ndarray:
    """Exact matrix elements ``<m|D(alpha)|n>`` for ``m < rows``, ``n < cols``.

    ``alpha`` may be an array; the result then has shape
    ``alpha.shape + (rows, cols)``.  Uses the associated-Laguerre closed form
    with log-gamma prefactors, so entries are the untruncated operator's
    elements restricted to the window (not the exponential of a truncated
    generator).
    """
    cols = rows if cols is None else cols
    alpha = np.asarray(alpha, dtype=complex)
    a = alpha[..., None, None]
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    lo = np.minimum(m, n)
    k = np.abs(m - n)
    x = np.abs(a) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        log_abs = np.log(np.abs(a))
        log_pow = np.where(k > 0, k * log_abs, 0.0)
    log_pref = 0.5 * (gammaln(lo + 1) - gammaln(lo + k + 1)) + log_pow - 0.5 * x
    arg = np.angle(a)
    # m >= n: alpha^k ; m < n: (-alpha^*)^k
    phase = np.where(m >= n, np.exp(1j * k * arg), (-1.0) ** k * np.exp(-1j * k * arg))
    lag = eval_genlaguerre(lo, k, x)
    return np.exp(log_pref) * phase * lag


def two_mode_squeeze_blocks(r: float, theta: float, dim: int) -> dict[int, np.ndarray]:
    """Blocks of ``exp(r e^{i theta} a^dag b^dag - h.c.)`` on fixed ``n_a - n_b``.

    The generator conserves ``delta = n_a - n_b``; block ``delta >= 0`` acts on
    the basis ``|delta + k, k>`` for ``k = 0..dim-1-delta`` (negative ``delta``
    follows by swapping the modes).  Entries come from the SU(1,1)
    disentangled form ``exp(G a^dag b^dag) sech(r)^(n_a+n_b+1) exp(-G^* a b)``,
    ``G = e^{i theta} tanh r``, so they are exact (untruncated) elements.
    """
    if r < 0:
        raise FockError("squeezing factor r must be >= 0")
    if r == 0:
        return {d: np.eye(dim - d, dtype=complex) for d in range(dim)}
    log_t = math.log(math.tanh(r))
    log_sech = -math.log(math.cosh(r))
    lf = gammaln(np.arange(2 * dim + 1) + 1)  # log factorials
    blocks = {}
    for delta in range(dim):
        size = dim - delta
        j = np.arange(size)[:, None]  # output pairs: |delta + j, j>
        block = np.zeros((size, size), dtype=complex)
        for kk in range(size):
            # remove kk pairs from input |delta + i, i> (i >= kk), then create u = j - i + kk
            i = np.arange(kk, size)[None, :]
            base = i - kk
            u = j - base
            ok = u >= 0
            uu = np.where(ok, u, 0)
            log_mag = (0.5 * (lf[delta + i] + lf[i] + lf[delta + j] + lf[j]) - lf[delta + base]
                       - lf[base] - lf[kk] - lf[uu] + log_sech * (delta + 2 * base + 1)
                       + (uu + kk) * log_t)
            log_mag = np.where(ok, log_mag, -np.inf)
            block[:, kk:] += (-1.0) ** kk * np.exp(log_mag + 1j * theta * (uu - kk))
        blocks[delta] = block
    return blocks


def _block_indices(delta: int, dim: int):
    k = np.arange(dim - abs(delta))
    return (k + delta, k) if delta >= 0 else (k, k - delta)


def two_mode_squeeze_matrix(r: float, theta: float, dim: int) -> np.ndarray:
    """Dense tensor ``U[m_a, m_b, n_a, n_b]`` assembled from ``two_mode_squeeze_blocks``."""
    out = np.zeros((dim,) * 4, dtype=complex)
    for delta, block in two_mode_squeeze_blocks(r, theta, dim).items():
        for d in {delta, -delta}:
            ia, ib = _block_indices(d, dim)
            out[ia[:, None], ib[:, None], ia[None, :], ib[None, :]] = block
    return out


def beam_splitter_matrix(transmittance: float, phase: float, dim: int) -> np.ndarray:
    """Tensor ``U[m_a, m_b, n_a, n_b]`` of the two-mode beam splitter.

    The generator conserves total photon number, so each block of fixed
    total ``N`` is exponentiated exactly (block size ``N+1``) and only the
    entries inside the per-mode cutoff are kept.
    """
    if not 0.0 <= transmittance <= 1.0:
        raise FockError(f"transmittance must lie in [0, 1], got {transmittance}")
    t = math.acos(math.sqrt(transmittance))
    out = np.zeros((dim,) * 4, dtype=complex)
    for total in range(2 * dim - 1):
        j = np.arange(total + 1)  # photons in mode a; basis |j, total - j>
        # a^dag b |j, total-j> = sqrt((j+1)(total-j)) |j+1, total-j-1>
        off = np.sqrt((j[:-1] + 1) * (total - j[:-1]))
        gen = np.zeros((total + 1, total + 1), dtype=complex)
        gen[j[1:], j[:-1]] = 1j * t * np.exp(1j * phase) * off
        gen[j[:-1], j[1:]] = 1j * t * np.exp(-1j * phase) * off
        block = expm(gen)
        keep = j[(j < dim) & (total - j < dim)]
        for mj in keep:
            out[mj, total - mj, keep, total - keep] = block[mj, keep]
    return out


def phase_rotation_matrix(phi: float, dim: int) -> np.ndarray:
    return np.diag(np.exp(-1j * phi * np.arange(dim)))


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass
class FockState:
    modes: tuple[ModeLabel, ...]
    cutoff: int
    amplitudes: np.ndarray
    leakage: float = 0.0

    def __post_init__(self):
        self.modes = _check_modes(self.modes)
        if self.cutoff < 1:
            raise FockError("cutoff must be >= 1")
        shape = (self.cutoff + 1,) * len(self.modes)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != shape:
            raise FockError(f"amplitude shape {self.amplitudes.shape} != {shape}")

    @property
    def dim(self) -> int:
        return self.cutoff + 1

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def axis(self, m: ModeLabel) -> int:
        try:
            return self.modes.index(m)
        except ValueError:
            raise FockError(f"mode {m} not in state {[str(x) for x in self.modes]}") from None

    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def _evolved(self, amps: np.ndarray, modes=None) -> "FockState":
        new = FockState(self.modes if modes is None else modes, self.cutoff, amps, self.leakage)
        new.leakage += max(0.0, self.norm2() - new.norm2())
        return new

    def apply_single(self, m: ModeLabel, matrix: np.ndarray) -> "FockState":
        ax = self.axis(m)
        amps = np.moveaxis(np.tensordot(matrix, self.amplitudes, axes=([1], [ax])), 0, ax)
        return self._evolved(amps)

    def apply_pair(self, ma: ModeLabel, mb: ModeLabel, tensor: np.ndarray) -> "FockState":
        if ma == mb:
            raise FockError("two-mode operation needs two distinct modes")
        ia, ib = self.axis(ma), self.axis(mb)
        amps = np.tensordot(tensor, self.amplitudes, axes=([2, 3], [ia, ib]))
        amps = np.moveaxis(amps, [0, 1], [ia, ib])
        return self._evolved(amps)

    def tensor(self, other: "FockState") -> "FockState":
        if other.cutoff != self.cutoff:
            raise FockError("tensor product needs equal cutoffs; use with_cutoff first")
        amps = np.multiply.outer(self.amplitudes, other.amplitudes)
        return FockState(self.modes + other.modes, self.cutoff, amps,
                         self.leakage + other.leakage)

    def with_cutoff(self, cutoff: int) -> "FockState":
        """Zero-pad (lossless) or truncate (norm lost goes to leakage)."""
        n = len(self.modes)
        if cutoff >= self.cutoff:
            amps = np.zeros((cutoff + 1,) * n, dtype=complex)
            amps[(slice(0, self.dim),) * n] = self.amplitudes
            return FockState(self.modes, cutoff, amps, self.leakage)
        amps = self.amplitudes[(slice(0, cutoff + 1),) * n].copy()
        new = FockState(self.modes, cutoff, amps, self.leakage)
        new.leakage += max(0.0, self.norm2() - new.norm2())
        return new

    def relabel(self, mapping: dict) -> "FockState":
        modes = tuple(mapping.get(m, m) for m in self.modes)
        return FockState(modes, self.cutoff, self.amplitudes, self.leakage)

    def permute(self, modes: Sequence[ModeLabel]) -> "FockState":
        order = [self.axis(m) for m in modes]
        if len(order) != len(self.modes):
            raise FockError("permute needs every mode exactly once")
        return FockState(tuple(modes), self.cutoff,
                         np.transpose(self.amplitudes, order), self.leakage)

    def photon_number_distribution(self, m: ModeLabel) -> np.ndarray:
        ax = self.axis(m)
        p = np.abs(self.amplitudes) ** 2
        return p.sum(axis=tuple(i for i in range(p.ndim) if i != ax))

    def mean_photon_number(self, m: ModeLabel) -> float:
        p = self.photon_number_distribution(m)
        return float(np.dot(np.arange(self.dim), p) / p.sum())

    def max_occupation(self) -> int:
        nz = np.argwhere(np.abs(self.amplitudes) > 0)
        return int(nz.max()) if nz.size else 0


def make_vacuum(modes: Sequence[ModeLabel], cutoff: int) -> FockState:
    modes = _check_modes(modes)
    if cutoff < 1:
        raise FockError("cutoff must be >= 1")
    amps = np.zeros((cutoff + 1,) * len(modes), dtype=complex)
    amps[(0,) * len(modes)] = 1.0
    return FockState(modes, cutoff, amps)


def make_fock(modes: Sequence[ModeLabel], cutoff: int, occupations: Sequence[int]) -> FockState:
    state = make_vacuum(modes, cutoff)
    state.amplitudes[(0,) * len(state.modes)] = 0.0
    state.amplitudes[tuple(occupations)] = 1.0
    return state


def apply_displacement(state: FockState, m: ModeLabel, alpha: complex) -> FockState:
    return state.apply_single(m, displacement_matrix(alpha, state.dim))


def apply_two_mode_squeeze(state: FockState, mode_a: ModeLabel, mode_b: ModeLabel,
                           r: float, theta: float = 0.0) -> FockState:
    if mode_a == mode_b:
        raise FockError("two-mode squeezing needs two distinct modes")
    ia, ib = state.axis(mode_a), state.axis(mode_b)
    amps = np.moveaxis(state.amplitudes, [ia, ib], [0, 1])
    out = np.zeros_like(amps)
    for delta, block in two_mode_squeeze_blocks(r, theta, state.dim).items():
        for d in {delta, -delta}:
            ja, jb = _block_indices(d, state.dim)
            out[ja, jb] = np.tensordot(block, amps[ja, jb], axes=(1, 0))
    return state._evolved(np.moveaxis(out, [0, 1], [ia, ib]))


def apply_beam_splitter(state: FockState, mode_a: ModeLabel, mode_b: ModeLabel,
                        transmittance: float, phase: float = 0.0) -> FockState:
    if mode_a == mode_b:
        raise FockError("beam splitter needs two distinct modes")
    return state.apply_pair(mode_a, mode_b,
                            beam_splitter_matrix(transmittance, phase, state.dim))


def apply_phase_rotation(state: FockState, m: ModeLabel, phi: float) -> FockState:
    ax = state.axis(m)
    shape = [1] * len(state.modes)
    shape[ax] = state.dim
    factors = np.exp(-1j * phi * np.arange(state.dim)).reshape(shape)
    return FockState(state.modes, state.cutoff, state.amplitudes * factors, state.leakage)


# ---------------------------------------------------------------------------
# Density matrices
# ---------------------------------------------------------------------------


@dataclass
class DensityMatrix:
    """Mixed state over ``modes``; ``matrix`` acts on the flattened truncated basis.

    ``trace_deficit`` is probability carried by the physical state but not
    represented inside the truncated basis.  ``total_trace`` includes it.
    """

    modes: tuple[ModeLabel, ...]
    cutoff: int
    matrix: np.ndarray
    trace_deficit: float = 0.0

    def __post_init__(self):
        self.modes = _check_modes(self.modes)
        d = (self.cutoff + 1) ** len(self.modes)
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (d, d):
            raise FockError(f"matrix shape {self.matrix.shape} != {(d, d)}")

    @classmethod
    def from_state(cls, state: FockState) -> "DensityMatrix":
        v = state.vector()
        return cls(state.modes, state.cutoff, np.outer(v, v.conj()))

    @property
    def dim(self) -> int:
        return self.cutoff + 1

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @property
    def total_trace(self) -> float:
        return self.trace() + self.trace_deficit

    def axis(self, m: ModeLabel) -> int:
        try:
            return self.modes.index(m)
        except ValueError:
            raise FockError(f"mode {m} not in {[str(x) for x in self.modes]}") from None

    def as_tensor(self) -> np.ndarray:
        """Tensor with ket axes first, then bra axes."""
        n = len(self.modes)
        return self.matrix.reshape((self.dim,) * (2 * n))

    def scaled(self, factor: float) -> "DensityMatrix":
        return DensityMatrix(self.modes, self.cutoff, self.matrix * factor,
                             self.trace_deficit * factor)

    def normalized(self) -> "DensityMatrix":
        return self.scaled(1.0 / self.total_trace)

    def relabel(self, mapping: dict) -> "DensityMatrix":
        return DensityMatrix(tuple(mapping.get(m, m) for m in self.modes), self.cutoff,
                             self.matrix, self.trace_deficit)

    def with_cutoff(self, cutoff: int) -> "DensityMatrix":
        n = len(self.modes)
        t = self.as_tensor()
        if cutoff >= self.cutoff:
            big = np.zeros((cutoff + 1,) * (2 * n), dtype=complex)
            big[(slice(0, self.dim),) * (2 * n)] = t
            d = (cutoff + 1) ** n
            return DensityMatrix(self.modes, cutoff, big.reshape(d, d), self.trace_deficit)
        small = t[(slice(0, cutoff + 1),) * (2 * n)]
        d = (cutoff + 1) ** n
        out = DensityMatrix(self.modes, cutoff, small.reshape(d, d), self.trace_deficit)
        out.trace_deficit += max(0.0, self.trace() - out.trace())
        return out

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))


def partial_trace(rho: DensityMatrix | FockState, keep: Iterable[ModeLabel]) -> DensityMatrix:
    keep = list(keep)
    if not keep:
        raise FockError("partial_trace needs at least one mode to keep")
    if isinstance(rho, FockState):
        psi = rho.amplitudes
        idx = [rho.axis(m) for m in keep]
        traced = [i for i in range(len(rho.modes)) if i not in idx]
        moved = np.transpose(psi, idx + traced)
        dk = rho.dim ** len(idx)
        mat = moved.reshape(dk, -1)
        return DensityMatrix(tuple(keep), rho.cutoff, mat @ mat.conj().T)
    n = len(rho.modes)
    idx = [rho.axis(m) for m in keep]
    traced = [i for i in range(n) if i not in idx]
    t = rho.as_tensor()
    # einsum letters: ket i, bra i+n; traced ket and bra share a letter
    letters = [chr(ord("a") + i) for i in range(2 * n)]
    for i in traced:
        letters[i + n] = letters[i]
    out = "".join(letters[i] for i in idx) + "".join(letters[i + n] for i in idx)
    red = np.einsum("".join(letters) + "->" + out, t)
    dk = rho.dim ** len(idx)
    return DensityMatrix(tuple(keep), rho.cutoff, red.reshape(dk, dk), rho.trace_deficit)


def fidelity(rho: DensityMatrix | FockState, psi: FockState) -> float:
    """``<psi|rho|psi> / (trace(rho) <psi|psi>)``.

    The trace includes ``trace_deficit``, so weight that fell outside the
    truncated basis counts against the fidelity rather than being silently
    renormalized away.
    """
    if isinstance(rho, FockState):
        # pure states: compare overlaps directly instead of building |phi><phi|
        if set(rho.modes) != set(psi.modes):
            raise FockError("fidelity needs states over the same modes")
        if rho.cutoff != psi.cutoff:
            raise FockError("fidelity needs states with the same cutoff")
        v = psi.permute(rho.modes).vector()
        w = rho.vector()
        return float(abs(np.vdot(v, w)) ** 2 / (np.vdot(w, w).real * np.vdot(v, v).real))
    if tuple(rho.modes) != tuple(psi.modes):
        if set(rho.modes) != set(psi.modes):
            raise FockError("fidelity needs states over the same modes")
        psi = psi.permute(rho.modes)
    if rho.cutoff != psi.cutoff:
        raise FockError("fidelity needs states with the same cutoff")
    v = psi.vector()
    val = np.vdot(v, rho.matrix @ v).real
    return float(val / (rho.total_trace * np.vdot(v, v).real))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    diff = a.matrix - b.matrix
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(0.5 * np.abs(ev).sum())
