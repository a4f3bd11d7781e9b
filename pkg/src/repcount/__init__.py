"""Repetition counting with pull-push priors.

Submodules are imported on demand (``from repcount import model``) so the
command-line entry point can cap BLAS threads before numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "ablation",
    "autodiff",
    "cli",
    "config",
    "data",
    "errors",
    "gradcheck",
    "model",
    "priors",
    "rca",
    "synthetic",
    "train",
]
