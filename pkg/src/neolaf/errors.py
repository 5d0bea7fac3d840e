"""Common exception root for the package.

Every package-specific exception derives from :class:`NeolafError`, so
callers that want blanket handling (the CLI, the eval harness) can catch
one type. Domain-specific exceptions live next to the code that raises
them.
"""


class NeolafError(Exception):
    """Base class for all package exceptions."""
