"""Static output-feedback synthesis for rational systems under saturation.

The package models differential-algebraic representations of rational
dynamics, assembles the vertex LMI programs that certify a saturated
static output-feedback loop, iterates them against an SDP solver, and
verifies the resulting gain and invariant-set estimate by independent
sampling and simulation.
"""

from .affine import AffineMatrix, BoxPolytope, ExplicitPolytope, product_vertices
from .model import (ConstantDelta, DarModel, DeltaSignal, LoopSignals,
                    PiecewiseConstantDelta, ResidualReport, SinusoidDelta,
                    Trajectory, VertexCycleDelta, WellPosednessError,
                    WellPosednessReport, closed_loop_signals, deadzone,
                    draw_residual_samples, monomial_oracle, recover_pi,
                    residual_check, saturate, simulate, simulate_batch,
                    validate_well_posedness)
from .lmis import (DecisionRegistry, LmiConstraint, LmiProgram,
                   build_synthesis_program, ls_multiplier, qsr_scale,
                   schur_stability_check)
from .sdp import (ConstraintMargin, MarginReport, SolveOptions, SolveReport,
                  dump_program, solve, verify_solution)
from .synthesis import (Certificate, EllipsoidMetrics, IterationRecord,
                        SynthesisResult, compute_gain, ellipsoid_boundary_points,
                        ellipsoid_metrics, ellipsoid_polyline,
                        find_stabilizing_gain, maximize_invariant_set,
                        synthesize)
from .verify import (CheckResult, RoaReport, VerificationReport,
                     check_dissipation, check_gain_consistency,
                     check_lmi_margins, check_sector_inclusion,
                     check_supply_sign, monte_carlo_roa, verify_certificate)
from .modelio import (ModelFormatError, certificate_from_dict,
                      certificate_to_dict, load_model, model_from_dict,
                      model_to_dict, read_json, save_model, synthesis_to_dict,
                      verification_to_dict, write_json_report,
                      write_trajectory_csv)
from . import benchmarks

__version__ = "0.1.0"

__all__ = [
    "AffineMatrix", "BoxPolytope", "ExplicitPolytope", "product_vertices",
    "ConstantDelta", "DarModel", "DeltaSignal", "LoopSignals",
    "PiecewiseConstantDelta", "ResidualReport", "SinusoidDelta", "Trajectory",
    "VertexCycleDelta", "WellPosednessError", "WellPosednessReport",
    "closed_loop_signals", "deadzone", "draw_residual_samples",
    "monomial_oracle", "recover_pi", "residual_check", "saturate", "simulate",
    "simulate_batch", "validate_well_posedness",
    "DecisionRegistry", "LmiConstraint", "LmiProgram",
    "build_synthesis_program", "ls_multiplier", "qsr_scale",
    "schur_stability_check",
    "ConstraintMargin", "MarginReport", "SolveOptions", "SolveReport",
    "dump_program", "solve", "verify_solution",
    "Certificate", "EllipsoidMetrics", "IterationRecord", "SynthesisResult",
    "compute_gain", "ellipsoid_boundary_points", "ellipsoid_metrics",
    "ellipsoid_polyline", "find_stabilizing_gain", "maximize_invariant_set",
    "synthesize",
    "CheckResult", "RoaReport", "VerificationReport", "check_dissipation",
    "check_gain_consistency", "check_lmi_margins", "check_sector_inclusion",
    "check_supply_sign", "monte_carlo_roa", "verify_certificate",
    "ModelFormatError", "certificate_from_dict", "certificate_to_dict",
    "load_model", "model_from_dict", "model_to_dict", "read_json",
    "save_model", "synthesis_to_dict", "verification_to_dict",
    "write_json_report", "write_trajectory_csv",
    "benchmarks",
    "__version__",
]
