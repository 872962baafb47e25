"""Offline converter: USPS Binary Alphadigits MATLAB container -> IDX."""

from .convert import MatFormatError, convert, main

__all__ = ["MatFormatError", "convert", "main"]
