"""Bayesian log-permeability inference from pressure-sensor networks.

Core pieces: second-generation (lifting) wavelet transforms with
quadtree coefficient storage, a multilevel adaptive Darcy solver, a
spike-and-slab multiresolution prior with noise-marginalized
likelihood, and a scale-adaptive tempered SMC sampler with
Bayes-factor model selection.
"""

__version__ = "0.1.0"
