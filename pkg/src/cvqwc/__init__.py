"""Wavelength conversion of polarization qubits by continuous-variable teleportation."""

from .fock import (
    Arm,
    DensityMatrix,
    FockError,
    FockState,
    ModeLabel,
    Pol,
    apply_beam_splitter,
    apply_displacement,
    apply_phase_rotation,
    apply_two_mode_squeeze,
    fidelity,
    make_fock,
    make_vacuum,
    mode,
    partial_trace,
    trace_distance,
)
from .sources import (
    InputQubit,
    SourceParams,
    apply_waveplates,
    make_fwm_source,
    make_input_qubit,
    make_tmsv_pair,
)
from .teleport import (
    BetaGrid,
    GainRule,
    HomodyneRecord,
    NumericalGuardError,
    TeleportResult,
    homodyne_density,
    mix_at_half_bs,
    project_and_displace,
    qubit_metrics,
    sample_beta,
    teleport_average,
    teleport_mc,
    transfer_operator,
)
from .bandwidth import (
    FrequencyMap,
    QubitSpectrum,
    SqueezingSpectrum,
    effective_fidelity,
    frequency_pairing,
    heisenberg_variance_check,
)
from .channels import LossParams, PipelineSpec, StageSpec, loss_channel, run_pipeline

__version__ = "0.1.0"
