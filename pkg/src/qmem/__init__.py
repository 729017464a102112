"""Models, simulation and analysis for heralded photon storage in atomic frequency comb memories."""

__version__ = "0.1.0"
