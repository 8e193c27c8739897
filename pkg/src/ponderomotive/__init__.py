"""Linear-response model of a cavity optomechanical amplifier and its heterodyne readout."""

__version__ = "0.1.0"

from .core_model import (  # noqa: E402
    TWO_PI,
    LowQWarning,
    ParameterError,
    PoleError,
    SystemParams,
    cavity_filter,
    cooperativity,
    gain,
    network_run_params,
    optical_spring,
    optomechanical_damping,
    nominal_params,
    quantum_run_params,
    shifted_frequency,
)
from .detection import DetectionChain, DetuningJitter, nominal_chain, quantum_run_jitter, squeezing_report  # noqa: E402
from .network_drive import drive_response, phase_profile, stability_scan  # noqa: E402
from .scattering import output_transfer, squeezing_map, vacuum_quadrature_psd  # noqa: E402

__all__ = [
    "TWO_PI",
    "LowQWarning",
    "ParameterError",
    "PoleError",
    "SystemParams",
    "cavity_filter",
    "cooperativity",
    "gain",
    "network_run_params",
    "nominal_params",
    "optical_spring",
    "optomechanical_damping",
    "quantum_run_params",
    "shifted_frequency",
    "DetectionChain",
    "DetuningJitter",
    "nominal_chain",
    "quantum_run_jitter",
    "squeezing_report",
    "drive_response",
    "phase_profile",
    "stability_scan",
    "output_transfer",
    "squeezing_map",
    "vacuum_quadrature_psd",
]
