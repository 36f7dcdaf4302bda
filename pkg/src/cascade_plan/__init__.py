"""Cascaded drive-path / longitudinal-displacement planning with safety-aware augmentation."""

__version__ = "0.1.0"
