"""Crosstalk-robust parallel gates: models, deviation engine, pulse synthesis and evaluation."""
from .core import ValidationError, propagate, trace_fidelity

__version__ = "0.1.0"

__all__ = ["ValidationError", "propagate", "trace_fidelity", "__version__"]
