"""Shared exception types."""


class ProtfitError(Exception):
    """Base class for all package errors."""


class InputError(ProtfitError):
    """Invalid user-supplied data (files, mutation codes, configs).

    CLI commands translate this into exit code 1; anything else is a
    runtime error (exit code 2).
    """
