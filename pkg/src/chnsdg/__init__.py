"""Structure-preserving FE/DG solver for variable-density Cahn-Hilliard-Navier-Stokes flow."""
from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["mesh", "fespace", "forms", "system", "solver", "sim", "io", "config", "cli", "kernels"]
