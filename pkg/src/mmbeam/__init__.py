"""Multi-modal (GPS + camera) mmWave beam prediction for V2V links."""

__version__ = "0.1.0"
