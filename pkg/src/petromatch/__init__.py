"""petromatch: reservoir history matching workbench.

Deck-aware parameterization, weighted NRMSE misfit scoring and Bayesian
optimization over simulator runs, driven either programmatically, through an
agent pipeline, or over the HTTP service.
"""

__version__ = "0.1.0"

from . import deck, errors  # noqa: F401
