"""Joint garment classification/localization and landmark detection."""

__version__ = "0.1.0"
