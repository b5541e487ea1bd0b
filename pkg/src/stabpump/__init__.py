"""Optical pumping of atoms coupled to an oscillator into stabilizer states."""

from .dynamics import Round, Tone, fully_mixed_initial, integrate_round, lindblad_rhs, run_schedule
from .operators import CouplingConfig, SystemDims, build_H_ah, build_n_s, build_n_t
from .protocol import ProtocolParams, compile_round, compile_round_rotated_variant, compile_schedule
from .stabilizer import (
    fidelity,
    linear_cluster_set,
    linear_cluster_state,
    parse_stabilizer,
    subspace_projector,
    validate_set,
)
from .walk import expected_rounds_exact, expected_rounds_mc, overlap_model

__version__ = "0.1.0"
