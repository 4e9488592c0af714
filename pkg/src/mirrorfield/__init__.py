"""Single-image novel view synthesis with mirror-symmetric feature conditioning."""

__version__ = "0.1.0"
