"""Ternary-input binary-weight CNN accelerator model: encoding, golden inference, cycle simulation, metrics."""

from .accel import AccelConfig, SimReport, balance_workload, simulate_network
from .errors import CalibrationError, ConfigError, FormatError, OracleMismatch, PartialSumOverflow, TbnError
from .golden import infer
from .network import NetworkConfig, default_network, load_network, save_network
from .sparse import BinaryWeightTensor, SparseEncoding, TernaryTensor, decode_sparse, encode_sparse

__all__ = [
    "AccelConfig", "SimReport", "balance_workload", "simulate_network",
    "CalibrationError", "ConfigError", "FormatError", "OracleMismatch", "PartialSumOverflow", "TbnError",
    "infer", "NetworkConfig", "default_network", "load_network", "save_network",
    "BinaryWeightTensor", "SparseEncoding", "TernaryTensor", "decode_sparse", "encode_sparse",
]
