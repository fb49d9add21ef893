"""Velocity model, flow integrators, attention probing and latent-optimization editing."""
