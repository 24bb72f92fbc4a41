"""Camera relocalization from pairwise relative poses.

Estimate absolute camera poses by averaging per-pair rotations and
triangulating the camera center from translation-direction rays, plus the
surrounding toolkit: synthetic scenes, evaluation metrics, text formats,
a CLI, and a small two-view pose regressor for experiments.
"""

__version__ = "0.1.0"
