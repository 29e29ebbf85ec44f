"""Box-constrained QP solver with compiled and pure-python engines."""
from .admm import (AdmmQpSolver, AdmmSettings, QpResult, available_engines,
                   default_engine)

__all__ = ["AdmmQpSolver", "AdmmSettings", "QpResult", "available_engines",
           "default_engine"]
