"""Minimal spheres with embedded planar ends, their inversions to closed
Willmore spheres, and the index/second-variation verification suite."""

__version__ = "0.1.0"
