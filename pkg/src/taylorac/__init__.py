"""Fourth-order Taylor-series finite elements for variable-density
incompressible flow with artificial compressibility."""

__version__ = "0.1.0"
