"""
Lighthouse Test Suite Package
Unit, end-to-end and acceptance tests for the desk-scale Gaussian splatting pipeline
"""

__version__ = "1.0.0"
__author__ = "Lighthouse Desk Team"

__all__ = [
    'test_config',
    'test_scene_forge',
    'test_plane_scaffold',
    'test_gaussian_cloud',
    'test_splat_render',
    'test_losses',
    'test_metrics_eval',
    'test_optimizer',
    'test_cli',
    'test_acceptance',
]
