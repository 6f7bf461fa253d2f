"""Freehand 3D ultrasound: calibration, voxel compounding and gap filling."""

__version__ = "0.1.0"
