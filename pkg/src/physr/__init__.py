"""Physics-informed spatiotemporal super-resolution of PDE fields."""

__version__ = "0.1.0"
