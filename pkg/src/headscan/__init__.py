"""Scan-to-print head reconstruction from synthetic orbiting depth scans."""

__version__ = "0.1.0"
