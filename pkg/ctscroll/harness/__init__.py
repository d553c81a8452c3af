"""Synthetic phantoms, datasets, run configs, seeded experiments and diagnostics."""
