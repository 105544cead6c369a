"""Simulated multi-configuration optimisation for stream processing jobs.

The package models a target job on a fluid-queue simulator, profiles candidate
configurations in parallel, keeps per-workload-segment Gaussian-process
surrogates combined through a rank-weighted ensemble, and reconfigures the
job when a cheaper configuration is predicted to satisfy latency and
recovery constraints.
"""

from importlib import resources

from .domain import ConfigSpace, Configuration, ConfigurationError, Hyperparams, Observation

__version__ = "0.1.0"

__all__ = ["ConfigSpace", "Configuration", "ConfigurationError", "Hyperparams", "Observation",
           "acceptance_spec_path", "__version__"]


def acceptance_spec_path():
    """Path of the bundled spec used for the end-to-end comparison."""
    return resources.files(__name__) / "data" / "acceptance.cfg"
