"""Non-adiabatic transitions in multi-level systems.

Geometric predictions from complex-time branch points and Stokes lines,
compared against direct numerical propagation.
"""

__version__ = "0.1.0"

from .errors import NonadiabaticError
from .model import HamiltonianModel, goe_sample, make_model

__all__ = ["HamiltonianModel", "NonadiabaticError", "goe_sample", "make_model", "__version__"]
