"""Contour-tracker swarm segmentation: soft contour map -> closed contour -> mask."""

__version__ = "0.1.0"
