"""Voxel radiance-field ensembles with density-aware uncertainty.

Train an ensemble of differentiable voxel fields on posed images of a
synthetic scene, quantify per-pixel uncertainty as RGB variance plus a
termination-probability epistemic term, evaluate calibration with
Gaussian NLL, and drive next-best-view selection with the uncertainty.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "1.0.0"

__all__ = ["kernel_backend", "__version__"]
