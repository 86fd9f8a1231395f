"""Guaranteed a posteriori error bounds for clusters of eigenvalues.

The package is organised in layers: ``linalg`` (eigensolvers and small
dense kernels), ``spectral`` (density-matrix distances, gap constants and
abstract bound assembly), two discretization back-ends (``planewave`` and
``fem``), the experiment driver ``certification`` and the ``cli``.
"""

__version__ = "0.1.0"
