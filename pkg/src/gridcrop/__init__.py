"""Grid-anchor image cropping: candidate enumeration, crop scoring and evaluation."""

__version__ = "0.1.0"
