"""Hierarchical splitting, H-matrix compression and block-encoding calculus for kernel matrices."""
from .blockenc import BlockEncoding, ResourceTally, verify
from .hierenc import encode_hierarchical, normalization_factor
from .hmatrix import HMatrix, compress, hmatvec
from .hsplit import HSplit, hierarchical_split
from .kernels import EntryOracle, Family, Kernel, PointSet, assemble_dense

__all__ = [
    "BlockEncoding", "EntryOracle", "Family", "HMatrix", "HSplit", "Kernel", "PointSet", "ResourceTally",
    "assemble_dense", "compress", "encode_hierarchical", "hierarchical_split", "hmatvec",
    "normalization_factor", "verify",
]
