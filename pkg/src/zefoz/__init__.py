"""Zero-field clock transitions (ZEFOZ) of electron-nuclear spin systems."""

__version__ = "0.1.0"
