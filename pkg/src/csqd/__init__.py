"""Cluster-adaptive sample-based quantum diagonalization (classical side).

Bitstring samples plus active-space integrals in, variational ground-state
energy out: pooled single-spin strings are clustered, wrong-particle-number
strings are corrected against per-cluster reference occupancies, and the
Hamiltonian is diagonalized in the product space of selected strings.
"""

__version__ = "0.1.0"

from .cisolver import DavidsonOptions, SubspaceSolution, davidson, h_matvec, s2_matvec, solve
from .clustering import ClusterModel, ClusterStats, assign, cluster_stats, fit_bmm, fit_kmodes
from .determinants import Determinant, excitation_degree, hamming_weight, join_bitstring, split_bitstring
from .diagnostics import eta, eta_matrix, exclusion_test, export_history, unique_strings
from .driver import RunConfig, RunResult, check_stop, run, run_csqd, run_sqd
from .errors import CSQDError
from .hamiltonian import ActiveSpaceHamiltonian, parse_fcidump, read_fcidump, validate, write_fcidump
from .kernels import BACKEND_NAME
from .oracle import DenseSectorBasis, dense_fci, dense_projected
from .recovery import (
    MembershipTable,
    flip_scores,
    recover_string,
    refine_pools,
    relu_weight,
    string_weight,
    update_references,
)
from .sampling import SampleSet, WeightedPool, load_samples, pool_spin_strings, postselect, synth_sample
from .subspace import BatchCandidate, carry_over, fill_deficit, merge_truncate, subsample_batch

__all__ = [
    "ActiveSpaceHamiltonian",
    "BACKEND_NAME",
    "BatchCandidate",
    "CSQDError",
    "ClusterModel",
    "ClusterStats",
    "DavidsonOptions",
    "DenseSectorBasis",
    "Determinant",
    "MembershipTable",
    "RunConfig",
    "RunResult",
    "SampleSet",
    "SubspaceSolution",
    "WeightedPool",
    "assign",
    "carry_over",
    "check_stop",
    "cluster_stats",
    "davidson",
    "dense_fci",
    "dense_projected",
    "eta",
    "eta_matrix",
    "excitation_degree",
    "exclusion_test",
    "export_history",
    "fill_deficit",
    "fit_bmm",
    "fit_kmodes",
    "flip_scores",
    "h_matvec",
    "hamming_weight",
    "join_bitstring",
    "load_samples",
    "merge_truncate",
    "parse_fcidump",
    "pool_spin_strings",
    "postselect",
    "read_fcidump",
    "recover_string",
    "refine_pools",
    "relu_weight",
    "run",
    "run_csqd",
    "run_sqd",
    "s2_matvec",
    "solve",
    "split_bitstring",
    "string_weight",
    "subsample_batch",
    "synth_sample",
    "unique_strings",
    "update_references",
    "validate",
    "write_fcidump",
]
