"""Detect and remove bloated npm dependencies using syscall traces."""

__version__ = "0.1.0"
