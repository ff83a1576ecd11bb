"""Proxy-posterior learning of velocity models from sparse wells and migrated images."""

__version__ = "0.1.0"
