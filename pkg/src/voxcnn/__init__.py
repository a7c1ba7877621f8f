"""voxcnn: a desk-scale volumetric CNN toolkit.

3D convolution/pooling/batch-norm layers with explicit backpropagation,
declarative architectures with symbolic summaries, affine 3D augmentation,
intensity preprocessing, transfer surgery on a 3D ResNet-18, patient record
storage, and a repeated stratified k-fold evaluation harness.
"""

from . import augment, checkpoint, evaluate, graph, preprocess, records, train, volume
from .fixtures import fixture_path, load_fixture

__all__ = [
    "augment",
    "checkpoint",
    "evaluate",
    "graph",
    "preprocess",
    "records",
    "train",
    "volume",
    "fixture_path",
    "load_fixture",
]

__version__ = "0.1.0"
