"""Simulation and analysis of quantum interference between independent
two-level emitters routed into programmable spatial modes."""

__version__ = "0.1.0"
