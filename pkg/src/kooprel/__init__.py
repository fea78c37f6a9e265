"""Koopman-autoencoder surrogates for first-passage reliability analysis.

The package learns a linear latent-transition (Koopman) surrogate of a
nonlinear dynamical system from simulated trajectories, then drives a
Monte-Carlo first-passage loop with it to estimate failure-time PDFs,
failure probabilities, and reliability indices.
"""

__version__ = "0.1.0"
