#!/usr/bin/env python3
"""
COREFP-CORE: Shared primitives and helpers
Central module for canonicalization, hashing, seed derivation, persistence and errors

Every corefp module raises the errors defined here and writes artifacts through dump_json,
so one canonical form backs every hash the package reports.
"""

import json
import hashlib
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# ============================================================================
# ERRORS
# ============================================================================

class CoreFPError(ValueError):
    """Base class for every error raised by corefp"""


class ShapeError(CoreFPError):
    """Input rejected because its dimensions do not match"""


class DivergenceError(CoreFPError):
    """Training produced a non-finite loss"""


class DegenerateGeometryError(CoreFPError):
    """DeepFool found no usable direction (all gradient differences are zero)"""


class DegenerateTranscriptError(CoreFPError):
    """Transcript row with zero norm cannot take part in a cosine matrix"""


class DatasetFormatError(CoreFPError):
    """Binary dataset could not be parsed"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class InsufficientDataError(CoreFPError):
    """Not enough samples for the requested partition"""


class CoreGenerationError(CoreFPError):
    """A core point failed its invariant; carries the labels finished so far"""

    def __init__(self, message: str, partial: Optional[Dict[int, Any]] = None):
        super().__init__(message)
        self.partial = partial or {}


class SchemaError(CoreFPError):
    """Artifact file has the wrong type, version or content hash"""


class StageError(CoreFPError):
    """Failure inside an experiment stage"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

# ============================================================================
# CANONICALIZATION & HASHING
# ============================================================================

def canonicalize(obj: Any) -> Any:
    """Cross-target deterministic canonicalization"""
    if isinstance(obj, dict):
        return {str(k): canonicalize(obj[k]) for k in sorted(obj.keys(), key=str)}
    elif isinstance(obj, (list, tuple)):
        return [canonicalize(v) for v in obj]
    elif isinstance(obj, np.ndarray):
        return canonicalize(obj.tolist())
    elif isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    elif isinstance(obj, (int, np.integer)):
        return int(obj)
    elif isinstance(obj, (float, np.floating)):
        f = float(obj)
        if not math.isfinite(f):
            raise ValueError("Non-finite numbers not allowed")
        return f
    else:
        return obj

def sha3_256_hex(s: str) -> str:
    """Content addressing for verification across all corefp components"""
    return hashlib.sha3_256(s.encode("utf-8")).hexdigest()

def canonical_json(obj: Any) -> str:
    return json.dumps(canonicalize(obj), sort_keys=True, separators=(',', ':'))

def generate_content_hash(obj: Any) -> str:
    """Generate hash for any canonicalizable object"""
    return sha3_256_hex(canonical_json(obj))

def derive_seed(root_seed: int, *stage: Any) -> int:
    """Derive an independent 64-bit seed for a named stage from the root seed"""
    label = ":".join([str(int(root_seed))] + [str(s) for s in stage])
    return int(sha3_256_hex(label)[:16], 16)

# ============================================================================
# STRUCTURED TEXT PERSISTENCE
# ============================================================================

def dump_json(path: Union[str, Path], artifact_type: str, body: Dict[str, Any]) -> str:
    """Write a typed, hashed JSON artifact; returns its content hash"""
    content_hash = generate_content_hash(body)
    document = {
        'type': artifact_type,
        'format_version': FORMAT_VERSION,
        'content_hash': content_hash,
        'body': canonicalize(body),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return content_hash

def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON artifact without checking its type"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No such file: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not a JSON artifact ({e})")
    if not isinstance(document, dict) or 'type' not in document or 'body' not in document:
        raise SchemaError(f"{path}: missing 'type'/'body' envelope")
    return document

def load_json(path: Union[str, Path], expected_type: str) -> Dict[str, Any]:
    """Read a typed JSON artifact and verify type, version and hash"""
    document = read_document(path)
    if document['type'] != expected_type:
        raise SchemaError(f"{path}: expected '{expected_type}' artifact, got '{document['type']}'")
    if document.get('format_version') != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format_version {document.get('format_version')}")
    body = document['body']
    if generate_content_hash(body) != document.get('content_hash'):
        raise SchemaError(f"{path}: content hash mismatch")
    return body

# ============================================================================
# LOGGING & CLI HELPERS
# ============================================================================

def configure_logging(verbosity: int = 0) -> None:
    """Install one stderr handler; 0 → WARNING, 1 → INFO, 2+ → DEBUG"""
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    root = logging.getLogger("corefp")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)

def print_audit_summary(audit: dict, component_name: str = ""):
    """Print standardized audit summary across all components"""
    print(f"\nAudit Summary{' - ' + component_name if component_name else ''}:")
    print(f"  Config Hash: {audit.get('config_hash', 'N/A')[:16]}...")
    print(f"  Report Hash: {audit.get('report_hash', 'N/A')[:16]}...")

    if 'artifacts' in audit:
        print(f"  Artifacts:   {len(audit['artifacts'])} written")

    if 'models' in audit:
        print(f"  Models:      {audit['models']} in zoo")

def default_out_dir() -> str:
    return os.environ.get("COREFP_OUT_DIR", "corefp-out")

def get_timestamp():
    """Get current ISO timestamp"""
    from datetime import datetime
    return datetime.now().isoformat()
