"""Crowd trip information for pedestrian trajectory prediction.

A grid road network is built from historical trajectories, a graph-recurrent
crowd model is pretrained on its occupancy, and its frozen trip latent is
fused into a socially-aware local predictor emitting bivariate Gaussians.
"""

__version__ = "0.1.0"
