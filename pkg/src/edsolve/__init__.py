"""Adaptive operator compression and multiresolution solvers for SPD matrices
given as sums of positive semidefinite energy elements."""

__version__ = "0.1.0"

from .estimators import MultiresolutionSolver, OperatorCompressor, PairClustering
from .coarse import (CoarseSpace, CompressedOperator, compress_apply, compression_error,
                     construct_phi, exact_psi, stiffness_condition_report)
from .energy import (EnergyDecomposition, Partition, assemble, closed_energy, diagonal_concentration,
                     interior_energy, restricted_energy)
from .linalg import SparseSymMatrix, householder_extend, pcg_solve
from .localize import construct_tilde_psi, decay_certificate, patch_layers
from .measurements import (alpha_factor, condition_factor, error_factor, interior_spectrum,
                           partition_measurements)
from .mmd import MMDConfig, eigen_recovery, mmd_decompose, mmd_solve, reduced_inherited
from .partition import connection, pair_cluster

__all__ = [
    "CoarseSpace", "CompressedOperator", "EnergyDecomposition", "MMDConfig", "MultiresolutionSolver",
    "OperatorCompressor", "PairClustering", "Partition",
    "SparseSymMatrix", "alpha_factor", "assemble", "closed_energy", "compress_apply",
    "compression_error", "condition_factor", "connection", "construct_phi", "construct_tilde_psi",
    "decay_certificate", "diagonal_concentration", "eigen_recovery", "error_factor", "exact_psi",
    "householder_extend", "interior_energy", "interior_spectrum", "mmd_decompose", "mmd_solve",
    "pair_cluster", "partition_measurements", "patch_layers", "pcg_solve", "reduced_inherited",
    "restricted_energy", "stiffness_condition_report",
]
