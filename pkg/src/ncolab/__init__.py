"""Heterogeneous-effect estimators under unmeasured confounding, with NCO diagnostics."""

__version__ = "0.1.0"
