"""Crop plot detection and plant height estimation from UAV LiDAR point clouds."""
__version__ = "0.1.0"
