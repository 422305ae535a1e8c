"""latgrid: representations, latent world models and PPO on tiny gridworlds."""

__version__ = "0.1.0"
