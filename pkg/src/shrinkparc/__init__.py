"""Shrinkage estimation of voxel-pair connectivity and shrinkage-based parcellation."""

__version__ = "0.1.0"
