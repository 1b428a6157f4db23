"""Shape-restricted inference for tidal streaming motion in stellar kinematic samples."""

__version__ = "0.1.0"
