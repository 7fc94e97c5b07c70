"""
FocalSplat: physically based defocus rendering and depth from defocus.

The package models a thin lens (Lens), renders defocus with a spatially
varying Gaussian PSF (Defocus, Procedural), renders 3D Gaussian scenes
with depth of field (Splatting), scores results (Losses), and recovers
depth and scene parameters (Estimation, Fitting). SceneIO handles files
and Commands is the command line.
"""

__version__ = '0.1'
