"""Explain why extreme transformations go undetected and suggest test fixes.

Kept import-light: subject test processes import :mod:`riptide.runtime`
through this package.
"""

__version__ = "0.1.0"
