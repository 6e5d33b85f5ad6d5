"""Policy-library control barrier function safety filter."""

__version__ = "0.1.0"
