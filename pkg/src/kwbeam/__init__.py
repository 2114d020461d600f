"""Keyword-cued mask-based MVDR beamforming for target-speaker enhancement."""

__version__ = "0.1.0"
