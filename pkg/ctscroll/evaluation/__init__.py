"""Metric protocol, significance testing and Grad-CAM."""
