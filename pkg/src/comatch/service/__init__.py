"""HTTP service exposing collaborative matching sessions."""

from .app import create_app

__all__ = ["create_app"]
