"""Tubular surface reconstruction from volumetric images.

The package decomposes a vessel-like shape into a centerline and
cross-sectional contours, fits a NURBS surface through the contour stack,
and validates the resulting triangle mesh against analytic phantoms.  A
small volume-conditioned denoising-diffusion model can generate centerlines
directly from a volume.
"""

__version__ = "0.1.0"
