"""Univariate priors: the cumulative-composition density, its uniform-noise convolution and the Gaussian scale model."""
