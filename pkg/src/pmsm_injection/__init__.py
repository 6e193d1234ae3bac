"""Saturation-aware sensorless rotor-angle estimation for PMSMs by signal injection."""

from .demodulation import DemodulatedCurrents, StreamingDemodulator, demodulate, demodulate_trace
from .estimator import EstimatorConfig, PositionEstimate, estimate, estimate_series, residual
from .identification import IdPoint, IdReport, SweepConfig, identify_full, run_id_experiment
from .injection import InjectionConfig, WaveformTable
from .magnetics import (IPM, PRESETS, SPM, CurrentDQ, FluxDQ, ModelValidityError, MotorParams,
                        admittance, current_from_flux, energy, flux_from_current_approx,
                        flux_from_current_exact, flux_jacobian, saliency_matrix)
from .pipeline import estimate_trace
from .scenarios import SCENARIOS, build_scenario
from .simulation import Profile, ScenarioTrace, run_scenario

__all__ = [
    "CurrentDQ", "DemodulatedCurrents", "EstimatorConfig", "FluxDQ", "IPM", "IdPoint", "IdReport",
    "InjectionConfig", "ModelValidityError", "MotorParams", "PRESETS", "PositionEstimate", "Profile",
    "SCENARIOS", "SPM", "ScenarioTrace", "StreamingDemodulator", "SweepConfig", "WaveformTable",
    "admittance", "build_scenario", "current_from_flux", "demodulate", "demodulate_trace", "energy",
    "estimate", "estimate_series", "estimate_trace", "flux_from_current_approx",
    "flux_from_current_exact", "flux_jacobian", "identify_full", "residual", "run_id_experiment",
    "run_scenario", "saliency_matrix",
]
