"""Event-based dual-scan structured light for mixed reflectance scenes."""

__version__ = "0.1.0"
