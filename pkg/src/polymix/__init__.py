"""Instrument recognition with mixing-based data augmentation."""

__version__ = "0.1.0"
