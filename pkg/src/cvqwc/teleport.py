"""Continuous-variable teleportation of a polarization qubit from arm A to arm B.

Two independent routes compute the conditional output:

* the brute-force route works on a dense joint ``FockState``: the input is
  mixed with arm A at a half beam splitter (``mix_at_half_bs``), the output
  ports are projected onto quadrature eigenstates, and arm B is displaced by
  ``g * beta``.  Projection also works directly on unmixed (in, A) modes via
  the displaced EPR bra; both pictures give the same numbers.
* the analytic route uses the transfer operator, which factorizes over the
  two polarizations.  ``teleport_average`` and ``teleport_mc`` use it, which
  keeps the source cutoff independent of the number of modes.

Outcome normalization: the EPR bra carries ``1/sqrt(pi)`` per polarization
(``1/pi`` for the pair), so the outcome density integrates to one over
``d^2 beta_H d^2 beta_V``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from .fock import (
    Arm,
    DensityMatrix,
    FockError,
    FockState,
    Pol,
    apply_beam_splitter,
    apply_displacement,
    apply_phase_rotation,
    displacement_matrix,
    fidelity as _state_fidelity,
    mode,
)
from .sources import INPUT_MODES, InputQubit, SourceParams, bloch_from_block, make_input_qubit

SQRT_PI = math.sqrt(math.pi)
OUTPUT_MODES = (mode("B", "H"), mode("B", "V"))
POLS = (Pol.H, Pol.V)


class NumericalGuardError(RuntimeError):
    """A numerical-adequacy check failed (grid mass, truncation leakage)."""

    def __init__(self, guard: str, message: str):
        super().__init__(f"[{guard}] {message}")
        self.guard = guard


class GainKind(str, enum.Enum):
    UNIT = "unit"
    MATCHED = "matched"
    FIXED = "fixed"


@dataclass(frozen=True)
class GainRule:
    kind: GainKind = GainKind.UNIT
    value: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", GainKind(self.kind))

    @classmethod
    def unit(cls):
        return cls(GainKind.UNIT)

    @classmethod
    def matched(cls):
        return cls(GainKind.MATCHED)

    @classmethod
    def fixed(cls, value: float):
        return cls(GainKind.FIXED, float(value))

    def resolve(self, r: float) -> float:
        if self.kind is GainKind.UNIT:
            return 1.0
        if self.kind is GainKind.MATCHED:
            return math.tanh(r)
        return self.value


@dataclass(frozen=True)
class BetaGrid:
    """Tensor-product trapezoid grid over Re/Im of beta_H and beta_V.

    Every one of the four real axes is ``linspace(-half_width, half_width,
    points_per_axis)``; weights are the 1-D trapezoid weights multiplied
    together, so ``sum(weights) = (2 * half_width)^4``.
    """

    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be > 0")
        if self.points_per_axis < 3:
            raise ValueError("points_per_axis must be >= 3")

    @classmethod
    def default(cls, cutoff: int, spacing: float = 0.4) -> "BetaGrid":
        hw = 3.0 + math.sqrt(cutoff)
        return cls(hw, 2 * math.ceil(hw / spacing) + 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points_per_axis)

    def weights1d(self) -> np.ndarray:
        h = 2 * self.half_width / (self.points_per_axis - 1)
        w = np.full(self.points_per_axis, h)
        w[0] = w[-1] = h / 2
        return w

    def points2d(self) -> np.ndarray:
        """Complex points, flattened with the real part as the slow index."""
        x = self.axis()
        return (x[:, None] + 1j * x[None, :]).ravel()

    def weights2d(self) -> np.ndarray:
        w = self.weights1d()
        return np.outer(w, w).ravel()


@dataclass(frozen=True)
class HomodyneRecord:
    beta_H: complex
    beta_V: complex
    density: float

    @property
    def beta(self) -> tuple[complex, complex]:
        return (self.beta_H, self.beta_V)


# ---------------------------------------------------------------------------
# Brute-force route on dense joint states
# ---------------------------------------------------------------------------


def hermite_functions(n_max: int, x) -> np.ndarray:
    """``psi_n(x) = <x|n>`` for ``n = 0..n_max``; shape ``(n_max+1,) + x.shape``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = math.pi ** -0.25 * np.exp(-x * x / 2)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def mix_at_half_bs(input_state: FockState, source: FockState) -> FockState:
    """Tensor the input with the source and mix (in,s) with (A,s) on a 50:50 splitter.

    Output ports are relabelled (plus,s) and (minus,s) and carry
    ``a_pm = (a_in +- a_A)/sqrt(2)``.  The cutoff is raised by the largest
    input occupation so the mixing itself loses no norm.
    """
    for pol in POLS:
        if mode("in", pol) not in input_state.modes:
            raise FockError(f"input lacks mode (in,{pol.value})")
        if mode("A", pol) not in source.modes:
            raise FockError(f"source lacks mode (A,{pol.value})")
    clash = set(input_state.modes) & set(source.modes)
    if clash:
        raise FockError(f"mode collision: {[str(m) for m in clash]}")
    cutoff = max(input_state.cutoff, source.cutoff) + input_state.max_occupation()
    joint = input_state.with_cutoff(cutoff).tensor(source.with_cutoff(cutoff))
    relabel = {}
    for pol in POLS:
        m_in, m_a = mode("in", pol), mode("A", pol)
        # phase -pi/2 maps a_in^dag -> (a^dag - b^dag)/sqrt2, a_A^dag -> (a^dag + b^dag)/sqrt2;
        # the pi rotation on the second port fixes the sign of the minus port
        joint = apply_beam_splitter(joint, m_in, m_a, 0.5, -math.pi / 2)
        joint = apply_phase_rotation(joint, m_a, math.pi)
        relabel[m_in] = mode("plus", pol)
        relabel[m_a] = mode("minus", pol)
    return joint.relabel(relabel)


def _measurement_axes(joint: FockState, pol: Pol):
    modes = joint.modes
    m_in, m_a = mode("in", pol), mode("A", pol)
    m_p, m_m = mode("plus", pol), mode("minus", pol)
    if m_in in modes and m_a in modes:
        return "epr", m_in, m_a
    if m_p in modes and m_m in modes:
        return "quadrature", m_p, m_m
    raise FockError(f"joint state lacks the measured modes for polarization {pol.value}")


def _bras(kind: str, betas: np.ndarray, dim: int) -> np.ndarray:
    """Coefficients ``E[g, i, j]`` with amplitude ``sum_ij E[g,i,j] C[.., i, .., j, ..]``."""
    if kind == "epr":
        # (1/sqrt(pi)) sum_n <n|_in <n|_A D_in(-beta): E[i, j] = <j|D(-beta)|i> / sqrt(pi)
        d = displacement_matrix(-betas, dim)
        return np.swapaxes(d, -1, -2) / SQRT_PI
    # <p_plus = Im beta| (x) <x_minus = Re beta|
    psi_u = hermite_functions(dim - 1, betas.real)  # (dim, G)
    psi_v = hermite_functions(dim - 1, betas.imag)
    ph = (-1j) ** np.arange(dim)
    return (ph[:, None] * psi_v).T[:, :, None] * psi_u.T[:, None, :]


def _project(joint: FockState, betas_h: np.ndarray, betas_v: np.ndarray):
    """Contract the measured modes; returns (tensor[G_H, G_V, rest...], rest_modes)."""
    kind_h, ih, jh = _measurement_axes(joint, Pol.H)
    kind_v, iv, jv = _measurement_axes(joint, Pol.V)
    amps = joint.amplitudes
    modes = list(joint.modes)
    e_h = _bras(kind_h, np.atleast_1d(betas_h), joint.dim)
    t = np.tensordot(e_h, amps, axes=([1, 2], [modes.index(ih), modes.index(jh)]))
    rest = [m for m in modes if m not in (ih, jh)]
    e_v = _bras(kind_v, np.atleast_1d(betas_v), joint.dim)
    t = np.tensordot(e_v, t, axes=([1, 2], [1 + rest.index(iv), 1 + rest.index(jv)]))
    rest = [m for m in rest if m not in (iv, jv)]
    return np.swapaxes(t, 0, 1), rest


def homodyne_density(joint: FockState, beta) -> float:
    """Outcome density ``P(beta_H, beta_V)`` of the joint x_-/p_+ measurement."""
    t, _ = _project(joint, np.array([beta[0]]), np.array([beta[1]]))
    return float(np.sum(np.abs(t) ** 2))


def homodyne_density_grid(joint: FockState, grid: BetaGrid, chunk_elems: int = 4_000_000) -> np.ndarray:
    """Density on every grid point; shape ``(P, P, P, P)`` = (Re b_H, Im b_H, Re b_V, Im b_V)."""
    pts = grid.points2d()
    n = grid.points_per_axis
    kind_h, ih, jh = _measurement_axes(joint, Pol.H)
    kind_v, iv, jv = _measurement_axes(joint, Pol.V)
    modes = list(joint.modes)
    t_h = np.tensordot(_bras(kind_h, pts, joint.dim), joint.amplitudes,
                       axes=([1, 2], [modes.index(ih), modes.index(jh)]))
    rest = [m for m in modes if m not in (ih, jh)]
    e_v = _bras(kind_v, pts, joint.dim)
    ax = (1 + rest.index(iv), 1 + rest.index(jv))
    per_row = max(1, t_h[0].size // joint.dim**2 * len(pts))
    step = max(1, chunk_elems // per_row)
    out = np.empty((len(pts), len(pts)))
    for s in range(0, len(pts), step):
        block = np.tensordot(e_v, t_h[s:s + step], axes=([1, 2], ax))  # (G_V, chunk, rest)
        p = np.abs(block) ** 2
        out[s:s + step] = p.reshape(p.shape[0], p.shape[1], -1).sum(axis=2).T
    return out.reshape(n, n, n, n)


def _inverse_cdf(cdf: np.ndarray, rng: np.random.Generator) -> int:
    # u in (0, total]; ties resolve to the lowest flattened index
    u = (1.0 - rng.random()) * cdf[-1]
    return int(np.searchsorted(cdf, u, side="left"))


def _grid_mass_guard(mass: float, minimum: float, grid: BetaGrid):
    if mass < minimum:
        raise NumericalGuardError(
            "grid_mass",
            f"grid captures {mass:.6f} of the outcome probability (< {minimum}); "
            f"increase half_width beyond {grid.half_width} or the cutoff",
        )


def sample_beta(joint: FockState, grid: BetaGrid, seed, min_mass: float = 0.99) -> HomodyneRecord:
    """Draw one outcome from the grid-discretized density by inverse CDF."""
    dens = homodyne_density_grid(joint, grid)
    w = grid.weights2d()
    weighted = (dens.reshape(len(w), len(w)) * w[:, None] * w[None, :]).ravel()
    _grid_mass_guard(float(weighted.sum()), min_mass, grid)
    idx = _inverse_cdf(np.cumsum(weighted), np.random.default_rng(seed))
    gh, gv = divmod(idx, len(w))
    pts = grid.points2d()
    return HomodyneRecord(complex(pts[gh]), complex(pts[gv]), float(dens.ravel()[idx]))


def project_and_displace(joint: FockState, beta, gain: float,
                         feedforward_phase=(0.0, 0.0)) -> FockState:
    """Project (in, A) onto outcome ``beta`` and displace (B,s) by ``gain * beta_s``.

    ``feedforward_phase[s]`` rotates the displacement of polarization ``s``
    (``gain * e^{i theta_s} * beta_s``), which is how a feed-forward locked to
    a phase-shifted source is expressed.  The returned state over the
    unmeasured modes is unnormalized: before displacement its squared norm
    equals ``homodyne_density(joint, beta)``.
    """
    t, rest = _project(joint, np.array([beta[0]]), np.array([beta[1]]))
    for m in OUTPUT_MODES:
        if m not in rest:
            raise FockError(f"joint state lacks output mode {m}")
    out = FockState(tuple(rest), joint.cutoff, t[0, 0], joint.leakage)
    for k, pol in enumerate(POLS):
        alpha = gain * np.exp(1j * feedforward_phase[k]) * beta[k]
        out = apply_displacement(out, mode("B", pol), alpha)
    return out


# ---------------------------------------------------------------------------
# Analytic route
# ---------------------------------------------------------------------------


def _check_q(q: float):
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q = tanh(r) must lie in [0, 1), got {q}")


def default_cutoff(r: float, tol: float = 1e-6) -> int:
    """Smallest cutoff N with ``tanh(r)^(N+1) < tol`` (at least 1)."""
    q = math.tanh(r)
    if q == 0.0:
        return 1
    n = max(1, math.floor(math.log(tol) / math.log(q)))
    while q ** (n + 1) >= tol:
        n += 1
    while n > 1 and q**n < tol:
        n -= 1
    return n


def schmidt_coefficients(q: float, cutoff: int, phi: float = 0.0) -> np.ndarray:
    n = np.arange(cutoff + 1)
    return math.sqrt(1 - q * q) * q**n * np.exp(1j * phi * n)


@dataclass
class TransferOperator:
    """Product ``h (x) v`` of single-polarization maps from (in,s) to (B,s).

    Rows index the output photon number on B, columns the input photon
    number, both up to ``cutoff``.  The pair normalization is ``(1 - q^2)/pi``.
    """

    h: np.ndarray
    v: np.ndarray
    cutoff: int

    @property
    def matrix(self) -> np.ndarray:
        return np.kron(self.h, self.v)

    def apply(self, state: FockState) -> FockState:
        amps = self.h @ state.amplitudes @ self.v.T
        return FockState(OUTPUT_MODES, self.cutoff, amps)


def transfer_operator(q: float, g: float, beta, cutoff: int, phi: float = 0.0,
                      track_source_phase: bool = True) -> TransferOperator:
    _check_q(q)
    mats = []
    for k, ph in enumerate((0.0, phi)):
        b = complex(beta[k])
        lam = schmidt_coefficients(q, cutoff, ph)
        theta = ph if track_source_phase else 0.0
        d_out = displacement_matrix(g * np.exp(1j * theta) * b, cutoff + 1)
        d_in = displacement_matrix(-b, cutoff + 1)
        mats.append(d_out @ (lam[:, None] * d_in) / SQRT_PI)
    return TransferOperator(mats[0], mats[1], cutoff)


@dataclass
class _Channel:
    """One polarization of the teleporter.

    ``kraus`` is a list of ``(shift, coeffs)``: source component ``k`` maps
    input photon number ``n`` to ``n - shift`` photons on B with amplitude
    ``coeffs[n]``.  A lossless source is the single diagonal component.
    """

    kraus: list
    gain: complex
    cutoff: int

    def vectors(self, betas: np.ndarray, n_in: int):
        """W[k, g, n, j] = (L_k D(-beta) |j>)[n] / sqrt(pi)."""
        d_in = displacement_matrix(-betas, self.cutoff + 1, n_in + 1)  # (G, N+1, J)
        w = np.zeros((len(self.kraus),) + d_in.shape, dtype=complex)
        for i, (shift, c) in enumerate(self.kraus):
            w[i, :, : self.cutoff + 1 - shift, :] = (c[:, None] * d_in)[:, shift:, :]
        return w / SQRT_PI

    def outputs(self, betas: np.ndarray, w: np.ndarray, n_out: int) -> np.ndarray:
        d_out = displacement_matrix(self.gain * betas, n_out + 1, self.cutoff + 1)
        return np.einsum("gmn,kgnj->kgmj", d_out, w)


def _source_channels(params: SourceParams, gain: float, cutoff: int, eta_b=1.0,
                     track_source_phase: bool = True) -> list[_Channel]:
    q = params.q
    _check_q(q)
    etas = (eta_b, eta_b) if np.isscalar(eta_b) else tuple(eta_b)
    channels = []
    for ph, eta_b in zip((0.0, params.phi), etas):
        if not 0.0 <= eta_b <= 1.0:
            raise ValueError(f"source transmittance must lie in [0, 1], got {eta_b}")
        lam = schmidt_coefficients(q, cutoff, ph)
        if eta_b >= 1.0:
            kraus = [(0, lam)]
        else:
            # losing k of n photons has amplitude sqrt(binom(n, k) eta^(n-k) (1-eta)^k)
            n = np.arange(cutoff + 1)
            kraus = []
            for k in range(cutoff + 1):
                c = lam * np.sqrt(binom.pmf(k, n, 1.0 - eta_b))
                if np.sum(np.abs(c) ** 2) > 1e-20:
                    kraus.append((k, c))
        theta = ph if track_source_phase else 0.0
        channels.append(_Channel(kraus, gain * np.exp(1j * theta), cutoff))
    return channels


def _input_tensor(inp, cutoff_hint: int = 1):
    """Input as (rho tensor R[a,b,c,d], trace_deficit, total_trace)."""
    if isinstance(inp, InputQubit):
        psi = make_input_qubit(inp, 1).amplitudes
        return np.einsum("ab,cd->abcd", psi, psi.conj()), 0.0, 1.0
    if isinstance(inp, FockState):
        inp = DensityMatrix.from_state(inp)
    if isinstance(inp, DensityMatrix):
        if len(inp.modes) != 2 or tuple(m.pol for m in inp.modes) != POLS:
            raise FockError("input density matrix must be over (x,H),(x,V) in that order")
        return inp.as_tensor(), inp.trace_deficit, inp.total_trace
    raise TypeError(f"unsupported input type {type(inp).__name__}")


@dataclass
class TeleportResult:
    rho: DensityMatrix
    captured_mass: float
    source_leakage: float
    cutoff: int
    grid: BetaGrid
    gain: float

    @property
    def normalized(self) -> DensityMatrix:
        return self.rho.normalized()


def _resolve(params: SourceParams, gain: GainRule | float, cutoff, grid):
    g = gain.resolve(params.r) if isinstance(gain, GainRule) else float(gain)
    cutoff = default_cutoff(params.r) if cutoff is None else cutoff
    grid = BetaGrid.default(cutoff) if grid is None else grid
    return g, cutoff, grid


def _chunks(n: int, per_item: int, budget: int = 3_000_000):
    step = max(1, budget // max(1, per_item))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


def teleport_average(inp, params: SourceParams, gain: GainRule | float = GainRule(),
                     grid: BetaGrid | None = None, *, cutoff: int | None = None,
                     output_cutoff: int = 4, source_eta: float | tuple[float, float] = 1.0,
                     track_source_phase: bool = True, min_mass: float = 0.99) -> TeleportResult:
    """Outcome-averaged output on (B,H),(B,V) by tensor-product trapezoid quadrature.

    The four-dimensional grid integral factorizes into two two-dimensional
    integrals, one per polarization, which is exact for a product grid.
    ``source_eta`` < 1 sends arm B of the source through a pure-loss channel
    before the feed-forward; a pair gives separate (H, V) transmittances.  The returned state is unnormalized: its total
    trace (including ``trace_deficit`` above ``output_cutoff``) equals the
    captured probability.
    """
    g, cutoff, grid = _resolve(params, gain, cutoff, grid)
    r_in, deficit_in, trace_in = _input_tensor(inp)
    n_in = r_in.shape[0] - 1
    chans = _source_channels(params, g, cutoff, source_eta, track_source_phase)
    pts, wts = grid.points2d(), grid.weights2d()
    dim_out = output_cutoff + 1
    m_blocks, theta_blocks = [], []
    for ch in chans:
        m = np.zeros((n_in + 1, n_in + 1, dim_out, dim_out), dtype=complex)
        th = np.zeros((n_in + 1, n_in + 1), dtype=complex)
        for sl in _chunks(len(pts), len(ch.kraus) * (cutoff + 1) * (n_in + 1 + dim_out)):
            w = ch.vectors(pts[sl], n_in)
            u = ch.outputs(pts[sl], w, output_cutoff)
            m += np.einsum("g,kgma,kgnc->acmn", wts[sl], u, u.conj())
            th += np.einsum("g,kgna,kgnc->ac", wts[sl], w, w.conj())
        m_blocks.append(m)
        theta_blocks.append(th)
    out = np.einsum("abcd,acik,bdjl->ijkl", r_in, m_blocks[0], m_blocks[1])
    total = float(np.einsum("abcd,ac,bd->", r_in, theta_blocks[0], theta_blocks[1]).real)
    d = dim_out**2
    rho = DensityMatrix(OUTPUT_MODES, output_cutoff, out.reshape(d, d))
    rho.trace_deficit = max(0.0, total - rho.trace())
    if deficit_in and trace_in > 0:
        # weight dropped above the previous cutoff is carried as deficit
        rho.trace_deficit += deficit_in * total / (trace_in - deficit_in)
    captured = total / (trace_in - deficit_in) if trace_in > deficit_in else 0.0
    _grid_mass_guard(captured, min_mass, grid)
    q = params.q
    leak = 1.0 - (1.0 - q ** (2 * (cutoff + 1))) ** 2
    return TeleportResult(rho, captured, leak, cutoff, grid, g)


@dataclass
class MCResult:
    rho: DensityMatrix
    stderr: np.ndarray
    trace_distance_se: float
    betas: np.ndarray
    densities: np.ndarray
    grid_mass: float

    @property
    def records(self) -> list[HomodyneRecord]:
        return [HomodyneRecord(complex(b[0]), complex(b[1]), float(p))
                for b, p in zip(self.betas, self.densities)]


def teleport_mc(inp, params: SourceParams, gain: GainRule | float = GainRule(),
                grid: BetaGrid | None = None, shots: int = 1000, seed=0, *,
                cutoff: int | None = None, output_cutoff: int = 4,
                track_source_phase: bool = True, min_mass: float = 0.99,
                max_grid_points: int = 60_000_000) -> MCResult:
    """Monte-Carlo estimate of the normalized averaged output.

    Each shot draws an outcome from the grid-discretized density (shot ``i``
    uses ``default_rng([seed, i])``) and contributes its normalized
    conditional state with equal weight.  ``stderr`` is the per-entry
    standard error; ``trace_distance_se = sqrt(d) / 2 * ||stderr||_F`` bounds
    the expected trace-distance fluctuation for a ``d``-dimensional state.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    g, cutoff, grid = _resolve(params, gain, cutoff, grid)
    r_in, _, _ = _input_tensor(inp)
    n_in = r_in.shape[0] - 1
    chans = _source_channels(params, g, cutoff, 1.0, track_source_phase)
    pts, wts = grid.points2d(), grid.weights2d()
    if len(pts) ** 2 > max_grid_points:
        raise ValueError(f"grid has {len(pts)**2} points; flattened sampling limit is {max_grid_points}")
    taus = []
    for ch in chans:
        tau = np.empty((len(pts), n_in + 1, n_in + 1), dtype=complex)
        for sl in _chunks(len(pts), len(ch.kraus) * (cutoff + 1) * (n_in + 1)):
            w = ch.vectors(pts[sl], n_in)
            tau[sl] = np.einsum("kgna,kgnc->gac", w, w.conj())
        taus.append(tau)
    dens = np.einsum("abcd,xac,ybd->xy", r_in, taus[0], taus[1]).real
    weighted = (dens * wts[:, None] * wts[None, :]).ravel()
    cdf = np.cumsum(weighted)
    _grid_mass_guard(float(cdf[-1]), min_mass, grid)
    idx = np.array([_inverse_cdf(cdf, np.random.default_rng([seed, i])) for i in range(shots)])
    gh, gv = np.divmod(idx, len(pts))
    bh, bv = pts[gh], pts[gv]
    us = []
    for ch, b in zip(chans, (bh, bv)):
        w = ch.vectors(b, n_in)
        us.append(ch.outputs(b, w, output_cutoff))  # (K, S, m, a)
    a_h = np.einsum("zsia,zskc->saick", us[0], us[0].conj())
    a_v = np.einsum("zsjb,zsld->sbjdl", us[1], us[1].conj())
    rho_s = np.einsum("abcd,saick,sbjdl->sijkl", r_in, a_h, a_v)
    p = dens[gh, gv]
    dim = (output_cutoff + 1) ** 2
    rho_s = rho_s.reshape(shots, dim, dim) / p[:, None, None]
    mean = rho_s.mean(axis=0)
    if shots > 1:
        se = np.sqrt(rho_s.real.var(axis=0, ddof=1) + rho_s.imag.var(axis=0, ddof=1)) / math.sqrt(shots)
    else:
        se = np.full(mean.shape, np.nan)
    td_se = 0.5 * math.sqrt(dim) * float(np.linalg.norm(se))
    rho = DensityMatrix(OUTPUT_MODES, output_cutoff, mean)
    rho.trace_deficit = max(0.0, 1.0 - rho.trace())
    return MCResult(rho, se, td_se, np.stack([bh, bv], axis=1), p, float(cdf[-1]))


# ---------------------------------------------------------------------------
# Qubit-level metrics
# ---------------------------------------------------------------------------


@dataclass
class QubitMetrics:
    vacuum_weight: float
    one_photon_weight: float
    multi_photon_weight: float
    total: float
    bloch_vector: np.ndarray
    one_photon_block: np.ndarray
    conditional_fidelity: float | None = None
    fidelity: float | None = None


def one_photon_block(rho: DensityMatrix) -> np.ndarray:
    t = rho.as_tensor()
    idx = [(1, 0), (0, 1)]
    return np.array([[t[i + j] for j in idx] for i in idx])


def qubit_metrics(rho_b: DensityMatrix, reference: InputQubit | None = None) -> QubitMetrics:
    """Photon-number weights, Stokes vector and fidelities of a two-polarization output.

    ``multi_photon_weight`` includes the trace deficit, so the three weights
    sum to ``total_trace``.  ``conditional_fidelity`` compares the
    renormalized one-photon block with the reference qubit; ``fidelity`` is
    the full-state overlap normalized by the total trace.
    """
    if len(rho_b.modes) != 2 or tuple(m.pol for m in rho_b.modes) != POLS:
        raise FockError("qubit_metrics needs a state over (x,H),(x,V)")
    t = rho_b.as_tensor()
    total = rho_b.total_trace
    vac = float(t[0, 0, 0, 0].real)
    block = one_photon_block(rho_b)
    one = float(np.trace(block).real)
    metrics = QubitMetrics(vac, one, total - vac - one, total, bloch_from_block(block), block)
    if reference is not None:
        v = reference.vector
        metrics.conditional_fidelity = float((v.conj() @ block @ v).real / one) if one > 0 else 0.0
        ref = make_input_qubit(reference, rho_b.cutoff).relabel(dict(zip(INPUT_MODES, rho_b.modes)))
        metrics.fidelity = _state_fidelity(rho_b, ref)
    return metrics
