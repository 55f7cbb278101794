"""Synthesis and validation of residual-generating filters for fault
detection and estimation over finite frequency bands.

The toolkit covers the full loop: rational nullspace parameterization of
disturbance-decoupled residual generators, mixed noise-vs-sensitivity
detection design and restricted estimation design via convex certificates,
probabilistically certified alarm thresholds, and independent frequency- and
simulation-domain validation of every certificate.
"""

__version__ = "0.1.0"

from .sysmodel import (DaeForm, FilterForm, StateSpace, apply_filter,
                       discretize_zoh, realize_filter, ss_from_tf,
                       stack_nullspace, to_dae)
from .freqan import (FeasibilityReport, FrequencyBands, GriddedSpectrum,
                     feasibility_check, gridded_spectrum, h2_norm_sq,
                     hinf_restricted, hminus_index, phi_matrix, psi_samples)
from .lmi import ConicProgram, SolverResult, embed_hermitian, gkyp_block, h2_block
from .synth_detect import (DetectionDesign, DetectionSpec,
                           synthesize as synthesize_detection,
                           validate as validate_detection)
from .synth_estim import (EstimationSpec, ExactDesign, GapResult,
                          SampledDesign, closed_form, nested_thetas,
                          suboptimality_gap, synthesize_exact,
                          synthesize_sampled,
                          validate as validate_estimation)
from .runtime import (MonteCarloReport, ResidualTrace, ThresholdSpec,
                      chebyshev_threshold, detectability_floor,
                      evaluate_windows, fdr_bound, monte_carlo_rates,
                      sub_gaussian_noise, threshold)
from .bench import (Scenario, fault_scenarios, load_plant, power_system_model,
                    turbine_model, write_fixtures)

__all__ = [
    "DaeForm", "FilterForm", "StateSpace", "apply_filter", "discretize_zoh",
    "realize_filter", "ss_from_tf", "stack_nullspace", "to_dae",
    "FeasibilityReport", "FrequencyBands", "GriddedSpectrum",
    "feasibility_check", "gridded_spectrum", "h2_norm_sq", "hinf_restricted",
    "hminus_index", "phi_matrix", "psi_samples",
    "ConicProgram", "SolverResult", "embed_hermitian", "gkyp_block",
    "h2_block",
    "DetectionDesign", "DetectionSpec", "synthesize_detection",
    "validate_detection",
    "EstimationSpec", "ExactDesign", "GapResult", "SampledDesign",
    "closed_form", "nested_thetas", "suboptimality_gap", "synthesize_exact",
    "synthesize_sampled", "validate_estimation",
    "MonteCarloReport", "ResidualTrace", "ThresholdSpec",
    "chebyshev_threshold", "detectability_floor", "evaluate_windows",
    "fdr_bound", "monte_carlo_rates", "sub_gaussian_noise", "threshold",
    "Scenario", "fault_scenarios", "load_plant", "power_system_model",
    "turbine_model", "write_fixtures",
]
