"""Shared exception base for the package."""


class SdvpipeError(Exception):
    """Base class for every error this package raises deliberately."""
