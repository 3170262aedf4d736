"""Quantitative analysis of digitized map corpora.

Submodules
----------
core
    Records, masks, embedding tables and their file formats.
image_ops
    Fragment ("mapel") sampling, rotation neutralization and features.
clustering
    Mini-batch k-means, exemplars, Ward trees and grid layouts.
semiotics
    Characteristicity, rupture coefficients, sign complexes, univocity.
composition
    Quadrant profiles, co-location graphs and composition types.
net_stats
    Creator name normalization, social graphs and community tests.
chrono_stats
    Smoothing, lagged correlation, trend tests and dyadic regression.
cli
    Batch front-end (``cartolab`` / ``python -m cartolab``).
"""

__version__ = "0.1.0"

from .errors import CartolabError  # noqa: E402

__all__ = ["__version__", "CartolabError"]
