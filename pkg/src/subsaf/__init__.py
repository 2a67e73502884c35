"""Robust subband adaptive filtering (GR-SAF family) with simulation tooling."""

__version__ = "0.1.0"
