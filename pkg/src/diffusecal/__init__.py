"""Diffuse-field spatial correlation, perturbed-array simulation and magnitude calibration."""

__version__ = "0.1.0"
