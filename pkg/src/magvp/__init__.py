"""Particle simulation and inequality verification for magnetized Vlasov-Poisson."""

import warnings

# numba probes an old system TBB and falls back on its own; the notice is noise
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

__version__ = "0.1.0"
