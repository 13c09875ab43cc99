"""
COREFP: Core-point fingerprints for piracy model identification

Victim-side fingerprints made of high-confidence points far from the decision
boundary; suspects are judged by their outputs on those points.
"""

__version__ = "0.1.0"
__all__ = [
    "canonicalize",
    "sha3_256_hex",
    "Network",
    "LabeledDataset",
    "Zoo",
    "Fingerprint",
    "generate_fingerprint",
    "SuspectTranscript",
    "query_suspect",
    "ExperimentEngine",
    "run_experiment",
]

from .corefp_core import canonicalize, sha3_256_hex
from .corefp_nn import Network
from .corefp_data import LabeledDataset
from .corefp_zoo import Zoo
from .corefp_fingerprint import Fingerprint, generate_fingerprint
from .corefp_identify import SuspectTranscript, query_suspect
from .corefp_harness import ExperimentEngine, run_experiment
