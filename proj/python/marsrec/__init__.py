"""Patch-based terrain landmark recognition core.

View transforms, metric losses, multi-similarity mining, attention pose
normalization, activation heatmaps, and checkpoint-backed embedding.
"""

try:
    from ._marsrec import *  # noqa: F401,F403  installed layout
    from ._marsrec import __version__  # noqa: F401
except ImportError:  # build-tree layout: extension sits on PYTHONPATH
    from _marsrec import *  # noqa: F401,F403
    from _marsrec import __version__  # noqa: F401
