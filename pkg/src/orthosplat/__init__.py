"""Incremental true-orthophoto (TDOM) engine built on streamed 3D Gaussian splatting."""

__version__ = "0.1.0"
