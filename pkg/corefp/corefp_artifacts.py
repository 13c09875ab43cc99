#!/usr/bin/env python3
"""
COREFP-ARTIFACTS: Controlled file writes with an audit trail
Every artifact of a run goes through one ArtifactWriter rooted at the output directory

- JSON artifacts in the typed, hashed envelope of corefp_core
- YAML (config.yaml, report.txt), CSV (verdicts, curves) and plain text
- Execution log: one entry per write with its SHA3 content hash
- manifest.json built from the execution log

Usage:
    writer = ArtifactWriter("corefp-out")
    writer.write_csv("curves/score_gap.csv", SCORE_GAP_COLUMNS, rows)
    writer.write_text("verdicts.csv", verdicts_csv(verdicts), "verdicts")
    writer.write_manifest({'config_hash': engine.config_hash})
"""

import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from .corefp_core import canonicalize, dump_json, get_timestamp, sha3_256_hex

# Optional YAML support
try:
    import yaml
    HAS_YAML = True
except ImportError:
    HAS_YAML = False
    yaml = None

logger = logging.getLogger(__name__)


def to_yaml(data: Any) -> str:
    """Deterministic block-style YAML of a canonicalized tree"""
    if not HAS_YAML:
        raise RuntimeError("YAML support requires: pip install pyyaml")
    return yaml.safe_dump(canonicalize(data), sort_keys=True, default_flow_style=False, allow_unicode=True)


def format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


class ArtifactWriter:
    """Write files under a root directory and log each write"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.execution_log: List[Dict[str, Any]] = []

    def path(self, rel: str) -> Path:
        return self.root / rel

    def record(self, rel: str, kind: str, content_hash: str, status: str = "success"):
        """Log a file written by another component (e.g. save_zoo)"""
        entry = {'artifact': rel, 'kind': kind, 'content_hash': content_hash, 'status': status,
                 'timestamp': get_timestamp()}
        self.execution_log.append(entry)
        logger.debug("wrote %s (%s) %s", rel, kind, content_hash[:16])
        return content_hash

    def write_text(self, rel: str, text: str, kind: str = "text") -> str:
        target = self.path(rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        return self.record(rel, kind, sha3_256_hex(text))

    def write_json(self, rel: str, artifact_type: str, body: Dict[str, Any]) -> str:
        return self.record(rel, artifact_type, dump_json(self.path(rel), artifact_type, body))

    def write_yaml(self, rel: str, data: Any, kind: str = "yaml") -> str:
        return self.write_text(rel, to_yaml(data), kind)

    def write_csv(self, rel: str, columns: Sequence[str], rows: Iterable[Union[Dict[str, Any], Sequence[Any]]],
                  kind: str = "csv") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            values = [row.get(c) for c in columns] if isinstance(row, dict) else list(row)
            if len(values) != len(columns):
                raise ValueError(f"{rel}: row of {len(values)} cells for {len(columns)} columns")
            writer.writerow([format_cell(v) for v in values])
        return self.write_text(rel, buf.getvalue(), kind)

    def artifacts(self) -> Dict[str, str]:
        """Latest content hash per written path"""
        return {e['artifact']: e['content_hash'] for e in self.execution_log if e['status'] == "success"}

    def write_manifest(self, extra: Optional[Dict[str, Any]] = None) -> str:
        body = {'artifacts': [{'path': p, 'content_hash': h} for p, h in sorted(self.artifacts().items())],
                'execution_log': list(self.execution_log), **(extra or {})}
        return self.write_json("manifest.json", "manifest", body)
