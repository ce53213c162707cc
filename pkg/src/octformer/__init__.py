"""Octree window attention for point clouds.

Shuffled-key octrees, fixed-point-count window partition with dilation,
masked multi-head attention, sparse octree convolutions, a hierarchical
transformer backbone with segmentation/classification heads, reference
baselines, and a benchmark harness.

Submodules are imported explicitly (``from octformer import partition``);
this module stays import-light so the CLI can configure BLAS thread pools
before numpy loads.
"""

__version__ = "0.1.0"
