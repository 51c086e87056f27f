"""
Lighthouse desk pipeline - plane-scaffold Gaussian splatting for panorama-style captures
"""

__version__ = "1.0.0"
__author__ = "Lighthouse Desk Team"
__description__ = "Synthetic capture, plane scaffold assembly, Gaussian training and evaluation on CPU"
