"""Personalized heparin dosing: dynamics, estimation, planning, evaluation."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: F401
    DEFAULT_DOMAINS,
    DEFAULT_GAMMAS,
    Domains,
    GlobalDecayRates,
    PatientParams,
    PatientState,
    Trajectory,
    mm_exact,
    sample_observation,
    simulate,
    step,
    therapeutic_range,
)
