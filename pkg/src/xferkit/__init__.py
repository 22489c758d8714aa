"""xferkit: label-free transferability scoring for semantic-segmentation
models on multispectral rasters.

Pseudo ground truth is derived from spectral and height indices (NDVI,
NDWI, a surface-model top-hat), model predictions are scored against it
with the same mIoU machinery used for ground-truth evaluation, and the
resulting index-based mIoU ranks candidate models on unlabeled target
domains. The package also ships the full preprocessing/tiling/metric
substrate, a GLCM + random-forest reference classifier, and a synthetic
domain generator to validate the method end to end.
"""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
