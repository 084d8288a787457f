"""Finite-bandwidth teleportation: frequency bins, spectra and variance checks.

Each frequency offset ``Omega`` of the input photon (carrier ``omega_A``) is
converted to ``omega_B + Omega`` by the squeezing between ``omega_A - Omega``
on arm A and ``omega_B + Omega`` on arm B.  Bins are independent
single-frequency teleporters; the effective fidelity is the spectral-weight
average of the per-bin fidelities.

The squeezing spectrum ``r(Omega)`` is indexed by the offset of the output
(telecom) mode, so bin ``k`` uses ``r(k * bin_width)``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .fock import apply_two_mode_squeeze, make_vacuum, mode
from .sources import InputQubit, SourceParams
from .teleport import (
    BetaGrid,
    GainRule,
    NumericalGuardError,
    qubit_metrics,
    teleport_average,
)


class SpectrumShape(str, enum.Enum):
    LORENTZIAN = "lorentzian"
    FLAT = "flat"
    GAUSSIAN = "gaussian"
    TABLE = "table"


@dataclass(frozen=True)
class SqueezingSpectrum:
    """``r(Omega)``: Lorentzian ``r0 / (1 + (Omega/gamma)^2)``, flat ``r0``, or tabulated.

    Tabulated spectra are linearly interpolated and held at the end values.
    """

    r0: float
    gamma: float = math.inf
    shape: SpectrumShape = SpectrumShape.LORENTZIAN
    table: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", SpectrumShape(self.shape))
        if self.shape not in (SpectrumShape.LORENTZIAN, SpectrumShape.FLAT, SpectrumShape.TABLE):
            raise ValueError(f"unsupported squeezing spectrum shape {self.shape.value}")
        if not self.r0 >= 0:
            raise ValueError("r0 must be >= 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.shape is SpectrumShape.TABLE:
            if not self.table or len(self.table) < 2:
                raise ValueError("table spectrum needs at least two (omega, r) pairs")
            t = np.asarray(self.table, dtype=float)
            if np.any(t[:, 1] < 0) or np.any(np.diff(t[:, 0]) <= 0):
                raise ValueError("table needs increasing omega and r >= 0")
            object.__setattr__(self, "table", tuple(map(tuple, t)))

    def r_at(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if self.shape is SpectrumShape.FLAT:
            return np.full(omega.shape, self.r0)
        if self.shape is SpectrumShape.LORENTZIAN:
            return self.r0 / (1.0 + (omega / self.gamma) ** 2)
        t = np.asarray(self.table)
        return np.interp(omega, t[:, 0], t[:, 1])

    def mirrored(self) -> "SqueezingSpectrum":
        if self.shape is not SpectrumShape.TABLE:
            return self
        return SqueezingSpectrum(self.r0, self.gamma, self.shape,
                                 tuple((-w, r) for w, r in reversed(self.table)))


@dataclass(frozen=True)
class QubitSpectrum:
    """Spectral intensity ``|f(Omega)|^2`` of the input photon.

    ``gaussian`` has mean ``center_offset`` and standard deviation ``sigma``.
    ``table`` holds ``(Omega, |f|^2)`` samples, linearly interpolated and zero
    outside the tabulated range; it is normalized by its trapezoid integral.
    """

    center_offset: float = 0.0
    sigma: float = 1.0
    shape: SpectrumShape = SpectrumShape.GAUSSIAN
    table: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", SpectrumShape(self.shape))
        if self.shape not in (SpectrumShape.GAUSSIAN, SpectrumShape.TABLE):
            raise ValueError(f"unsupported qubit spectrum shape {self.shape.value}")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.shape is SpectrumShape.TABLE:
            if not self.table or len(self.table) < 2:
                raise ValueError("table spectrum needs at least two (omega, |f|^2) pairs")
            t = np.asarray(self.table, dtype=float)
            if np.any(t[:, 1] < 0) or np.any(np.diff(t[:, 0]) <= 0):
                raise ValueError("table needs increasing omega and |f|^2 >= 0")
            object.__setattr__(self, "table", tuple(map(tuple, t)))

    def bin_masses(self, fmap: "FrequencyMap") -> np.ndarray:
        """Probability of each bin ``[Omega_k - w/2, Omega_k + w/2]`` (not renormalized)."""
        edges = np.append(fmap.offsets() - fmap.bin_width / 2, fmap.offsets()[-1] + fmap.bin_width / 2)
        if self.shape is SpectrumShape.GAUSSIAN:
            return np.diff(norm.cdf(edges, loc=self.center_offset, scale=self.sigma))
        t = np.asarray(self.table)
        fine = np.union1d(t[:, 0], edges)
        dens = np.interp(fine, t[:, 0], t[:, 1], left=0.0, right=0.0)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(fine) * (dens[1:] + dens[:-1]) / 2)])
        return np.diff(np.interp(edges, fine, cum)) / cum[-1]

    def mirrored(self) -> "QubitSpectrum":
        if self.shape is SpectrumShape.GAUSSIAN:
            return QubitSpectrum(-self.center_offset, self.sigma, self.shape)
        return QubitSpectrum(self.center_offset, self.sigma, self.shape,
                             tuple((-w, v) for w, v in reversed(self.table)))


@dataclass(frozen=True)
class FrequencyMap:
    """Symmetric bins ``k = -K..K`` at offsets ``k * bin_width``; ``n_bins = 2K + 1``."""

    omega_A: float
    omega_B: float
    bin_width: float
    n_bins: int

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")
        if self.n_bins < 1 or self.n_bins % 2 == 0:
            raise ValueError("n_bins must be a positive odd integer")

    @property
    def half(self) -> int:
        return (self.n_bins - 1) // 2

    def bins(self) -> np.ndarray:
        return np.arange(-self.half, self.half + 1)

    def offsets(self) -> np.ndarray:
        return self.bins() * self.bin_width

    def check_bin(self, k: int):
        if not -self.half <= k <= self.half:
            raise ValueError(f"bin {k} outside [-{self.half}, {self.half}]")


@dataclass(frozen=True)
class FrequencyPairing:
    bin: int
    partner_bin: int
    input: float
    partner_A: float
    output: float


def frequency_pairing(fmap: FrequencyMap, k: int) -> FrequencyPairing:
    """Input ``omega_A + Omega`` needs squeezing of ``omega_A - Omega`` (arm A) with ``omega_B + Omega``."""
    fmap.check_bin(k)
    om = k * fmap.bin_width
    return FrequencyPairing(k, -k, fmap.omega_A + om, fmap.omega_A - om, fmap.omega_B + om)


def heisenberg_variance_check(r: float, cutoff: int, max_leakage: float = 1e-9) -> float:
    """``Var(x_B - x_A)`` on a truncated two-mode squeezed vacuum over its vacuum value (1).

    The truncated state is renormalized before taking moments.  Raises
    ``NumericalGuardError`` when the truncation leakage exceeds ``max_leakage``.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    ma, mb = mode("A", "H"), mode("B", "H")
    state = apply_two_mode_squeeze(make_vacuum((ma, mb), cutoff), ma, mb, r)
    if state.leakage > max_leakage:
        raise NumericalGuardError(
            "leakage", f"TMSV truncation leakage {state.leakage:.3e} at cutoff {cutoff} "
                       f"exceeds {max_leakage:.1e}; raise the cutoff")
    # one extra level holds a^dag acting on the top state exactly
    psi = state.with_cutoff(cutoff + 1).amplitudes
    psi = psi / np.linalg.norm(psi)
    dim = cutoff + 2
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    x = (a + a.T) / math.sqrt(2)
    dv = psi @ x.T - x @ psi  # x_B - x_A with A the first axis
    mean = np.vdot(psi, dv).real
    return float(np.vdot(dv, dv).real - mean**2)


@dataclass(frozen=True)
class BinResult:
    bin: int
    omega: float
    partner_bin: int
    r: float
    weight: float
    fidelity: float
    one_photon_weight: float
    captured_mass: float
    source_leakage: float


@dataclass
class EffectiveFidelity:
    value: float
    bins: list[BinResult]
    outside_mass: float

    @property
    def one_photon_weight(self) -> float:
        return float(sum(b.weight * b.one_photon_weight for b in self.bins))

    @property
    def captured_mass(self) -> float:
        return min(b.captured_mass for b in self.bins)

    @property
    def source_leakage(self) -> float:
        return max(b.source_leakage for b in self.bins)


def single_frequency_fidelity(r: float, gain: GainRule, inp: InputQubit,
                              grid: BetaGrid | None = None, cutoff: int | None = None,
                              output_cutoff: int = 4):
    """Fidelity of the averaged output at one frequency, with its metrics and raw result."""
    res = teleport_average(inp, SourceParams(r), gain, grid, cutoff=cutoff, output_cutoff=output_cutoff)
    metrics = qubit_metrics(res.rho, inp)
    return metrics.fidelity, metrics, res


def effective_fidelity(qspec: QubitSpectrum, sspec: SqueezingSpectrum, gain: GainRule,
                       inp: InputQubit, grid: BetaGrid | None, fmap: FrequencyMap, *,
                       cutoff: int | None = None, output_cutoff: int = 4,
                       max_outside_mass: float = 1e-3, threads: int = 1) -> EffectiveFidelity:
    """Spectral-weight average ``sum_k w_k F(r(Omega_k))`` over the bins.

    ``w_k`` are the bin probabilities of the qubit spectrum renormalized to
    sum to one.  Bins with equal ``r`` share one teleportation run.
    """
    masses = qspec.bin_masses(fmap)
    outside = max(0.0, 1.0 - float(masses.sum()))
    if outside > max_outside_mass:
        raise ValueError(f"qubit spectrum has mass {outside:.3e} outside the bins "
                         f"(> {max_outside_mass}); widen the frequency map")
    weights = masses / masses.sum()
    rs = sspec.r_at(fmap.offsets())
    unique = sorted(set(float(r) for r in rs))

    def work(r):
        return single_frequency_fidelity(r, gain, inp, grid, cutoff, output_cutoff)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        cache = dict(zip(unique, pool.map(work, unique)))
    rows = []
    for k, om, r, w in zip(fmap.bins(), fmap.offsets(), rs, weights):
        f, metrics, res = cache[float(r)]
        pairing = frequency_pairing(fmap, int(k))
        rows.append(BinResult(int(k), float(om), pairing.partner_bin, float(r), float(w), f,
                              metrics.one_photon_weight, res.captured_mass, res.source_leakage))
    value = float(sum(b.weight * b.fidelity for b in rows))
    return EffectiveFidelity(value, rows, outside)


__all__ = [
    "SpectrumShape", "SqueezingSpectrum", "QubitSpectrum", "FrequencyMap", "FrequencyPairing",
    "frequency_pairing", "heisenberg_variance_check", "BinResult", "EffectiveFidelity",
    "effective_fidelity", "single_frequency_fidelity",
]
