"""Coupled active-space flows for fermionic Hamiltonians at desk scale."""

from qflow.active_space import ActiveSpace, enumerate_spaces, parse_space
from qflow.cluster import AmplitudeStore, Excitation, cluster_analyze
from qflow.flow import FlowConfig, fci_energy, run_ccflow_nonhermitian, run_qflow, run_subflow
from qflow.hamiltonian import build_matrix
from qflow.integrals import IntegralStore, load, parse_fcidump, serialize_fcidump

__all__ = [
    "ActiveSpace", "AmplitudeStore", "Excitation", "FlowConfig", "IntegralStore",
    "build_matrix", "cluster_analyze", "enumerate_spaces", "fci_energy", "load", "parse_fcidump",
    "parse_space", "run_ccflow_nonhermitian", "run_qflow", "run_subflow", "serialize_fcidump",
]
