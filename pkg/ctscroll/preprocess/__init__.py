"""Volume preprocessing: HU windowing, resampling, canonical grid and triplets."""
