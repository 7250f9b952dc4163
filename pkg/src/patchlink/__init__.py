"""Open-vocabulary semantic segmentation from precomputed backbone tensors.

A small learned projection warps text embeddings into the patch space of a
frozen self-supervised vision transformer; segmentation is cosine scoring
of patches against projected class names, with optional attention-guided
background handling and affinity-based mask refinement. Feature extraction
lives in a separate exporter; this package consumes `.t2d` containers.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
