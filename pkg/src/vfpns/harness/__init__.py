"""Experiment orchestration: configs, initial data, sweeps, audits and reports."""

from .audit import AuditRow, AuditTerms, ModulatedEnergyLedger, audit_terms
from .config import ConfigError, RunConfig, config_from_dict, dt_for, load_config, validate
from .initial import InitialDataError, init_scaled_well_prepared, init_well_prepared, initial_state
from .report import emit_report
from .session import EpsResult, EpsRun
from .sweep import SweepError, SweepResult, eps_sweep, evaluate_acceptance

__all__ = [
    "AuditRow",
    "AuditTerms",
    "ConfigError",
    "EpsResult",
    "EpsRun",
    "InitialDataError",
    "ModulatedEnergyLedger",
    "RunConfig",
    "SweepError",
    "SweepResult",
    "audit_terms",
    "config_from_dict",
    "dt_for",
    "emit_report",
    "eps_sweep",
    "evaluate_acceptance",
    "init_scaled_well_prepared",
    "init_well_prepared",
    "initial_state",
    "load_config",
    "validate",
]
