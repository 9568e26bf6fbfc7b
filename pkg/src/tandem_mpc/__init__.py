"""Invariant-error LTV-MPC for a tandem-rotor helicopter."""
from .config import SimConfig, load_config
from .errors import TandemMpcError
from .harness import compare_horizons, monte_carlo, run_closed_loop

__all__ = ["SimConfig", "load_config", "TandemMpcError", "run_closed_loop",
           "monte_carlo", "compare_horizons"]
__version__ = "0.1.0"
