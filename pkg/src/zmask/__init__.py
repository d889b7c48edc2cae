"""Over-activation analysis defense against adversarial patches.

Library layout:

- ``npyio`` / ``netpbm`` / ``tensorops``: array file I/O and the spatial
  kernels (bilinear resize, summed-area-table average pooling).
- ``calibration``: clean-image channel statistics and z-scoring.
- ``heatmaps``: the pooling-cascade over-activation heatmaps.
- ``fusion``: soft-thresholding blocks, detection score, defense mask.
- ``autodiff`` / ``optim`` / ``training`` / ``roc``: reverse-mode engine,
  ADAM, fusion fitting, ROC threshold selection.
- ``scenes`` / ``toymodel`` / ``patching``: the desk-scale lab (procedural
  data, traced convnet, transform sampling and patch application).
- ``attacks``: patch losses and the universal/defense-aware optimizers.
- ``pipeline`` / ``metrics`` / ``traceio`` / ``cli``: orchestration.
"""

__version__ = "0.1.0"
