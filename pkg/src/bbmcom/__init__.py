"""Self-interacting branching Brownian motion and super-Brownian particle systems.

Simulation, center-of-mass analysis and statistical validation.
"""

__version__ = "0.1.0"

from .model import ModelParams, ParticleCloud, Snapshot, simulate  # noqa: E402
from .sbm import SBMParams  # noqa: E402

__all__ = ["ModelParams", "ParticleCloud", "Snapshot", "simulate", "SBMParams", "__version__"]
