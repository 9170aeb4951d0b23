"""Global-to-local temporal human pose and shape estimation at desk scale."""

__version__ = "0.1.0"
