"""HTTP service wrapping the tuner: run experiments, compare, analyze."""

from .app import app, create_app

__all__ = ["app", "create_app"]
