"""sandlab: a desk-scale laboratory for avalanching transport.

Three layers: a driven 2D threshold sandpile with exact grain bookkeeping
(compiled kernel + pure-Python fallback), an avalanche-statistics pipeline
(log-binned densities, discrete power-law MLE, rescaling collapses), and a
dimensional-analysis toolkit that derives the dimensionless control
parameters of driven dissipative systems.
"""

__version__ = "0.1.0"

from .kernels import ACTIVE_BACKEND, available_backends, get_backend

__all__ = ["ACTIVE_BACKEND", "available_backends", "get_backend",
           "__version__"]
