"""Language-centered human activity recognition from IMU windows."""

__version__ = "0.1.0"
