"""CT-Scroll: global-local attention over CT triplet slices."""

__version__ = "0.1.0"
