#!/usr/bin/env python3
"""
COREFP-IDENTIFY: Piracy vs homologous decisions from suspect outputs on F

Three methods over transcripts (suspect logits on every core point):
- L1:      sum over core points of |f_v(phi_i)_i - f_s(phi_i)_i|
- COS:     entrywise L1 gap between the two cosine-similarity matrices / N_f^2
- CLUSTER: nearest of k centers fitted on a known HM/PM/EM population

Usage:
    victim_t = query_suspect(zoo.victim.oracle(), fp)
    suspect_t = query_suspect(record.oracle(), fp)
    th = calibrate_thresholds(victim_t, [(t, kind) for t, kind in population])
    verdict = decide(victim_t, suspect_t, th, Method.COS)
"""

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from .corefp_core import (DegenerateTranscriptError, InsufficientDataError, SchemaError,
                          ShapeError, dump_json, load_json)
from .corefp_fingerprint import Fingerprint
from .corefp_nn import softmax
from .corefp_zoo import ModelKind

logger = logging.getLogger(__name__)

TAG_ORDER = ("HM", "PM", "EM")
OUTPUT_KINDS = ("logits", "probabilities")
CLUSTER_FEATURES = ("outputs", "cosine")
VERDICT_COLUMNS = ("model_id", "kind_truth", "method", "distance", "cluster", "is_piracy")

KindLike = Union[ModelKind, str]

# ============================================================================
# TYPES
# ============================================================================

class Method(Enum):
    L1 = "l1"
    COS = "cos"
    CLUSTER = "cluster"


@dataclass
class SuspectTranscript:
    """Row i holds the suspect's full output vector on core point i"""
    model_id: str
    labels: List[int]
    outputs: np.ndarray
    output_kind: str = "logits"

    def __post_init__(self):
        self.outputs = np.asarray(self.outputs, dtype=np.float64)
        self.labels = [int(l) for l in self.labels]
        if self.outputs.ndim != 2:
            raise ShapeError(f"Transcript '{self.model_id}' must be 2-D, got shape {self.outputs.shape}")
        if self.outputs.shape[0] != len(self.labels):
            raise ShapeError(f"Transcript '{self.model_id}': {self.outputs.shape[0]} rows for {len(self.labels)} core points")
        if not np.all(np.isfinite(self.outputs)):
            raise ValueError(f"Transcript '{self.model_id}' holds non-finite entries")
        if any(not 0 <= l < self.outputs.shape[1] for l in self.labels):
            raise ShapeError(f"Transcript '{self.model_id}': core point labels exceed {self.outputs.shape[1]} outputs")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"output_kind must be one of {OUTPUT_KINDS}, got '{self.output_kind}'")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.outputs.shape

    def flattened(self) -> np.ndarray:
        return self.outputs.ravel()

    def target_scores(self) -> np.ndarray:
        """f_s(phi_i)_i for every core point"""
        return self.outputs[np.arange(len(self.labels)), self.labels]

    def to_dict(self) -> Dict[str, Any]:
        return {'model_id': self.model_id, 'labels': self.labels, 'outputs': self.outputs,
                'output_kind': self.output_kind}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SuspectTranscript":
        try:
            return cls(d['model_id'], d['labels'], np.array(d['outputs'], dtype=np.float64),
                       d.get('output_kind', "logits"))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Malformed transcript document: {e}")


@dataclass
class Thresholds:
    d1: float
    d2: float
    margin_l1: Optional[float] = None
    margin_cos: Optional[float] = None
    overlap_l1: bool = False
    overlap_cos: bool = False

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise ValueError(f"Thresholds must be positive, got d1={self.d1}, d2={self.d2}")

    def for_method(self, method: Method) -> float:
        if method is Method.L1:
            return self.d1
        if method is Method.COS:
            return self.d2
        raise ValueError(f"No threshold for method '{method.value}'")

    def to_dict(self) -> Dict[str, Any]:
        return {'d1': self.d1, 'd2': self.d2, 'margin_l1': self.margin_l1, 'margin_cos': self.margin_cos,
                'overlap_l1': self.overlap_l1, 'overlap_cos': self.overlap_cos}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Thresholds":
        return cls(float(d['d1']), float(d['d2']), d.get('margin_l1'), d.get('margin_cos'),
                   bool(d.get('overlap_l1', False)), bool(d.get('overlap_cos', False)))


@dataclass
class ClusterModel:
    k: int
    centers: np.ndarray
    assignments: np.ndarray
    algorithm: str
    tags: Optional[List[str]] = None
    converged: bool = True
    iterations: int = 0
    features: str = "outputs"
    output_kind: str = "logits"

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.k < 1 or self.centers.shape[0] != self.k:
            raise ValueError(f"ClusterModel needs k >= 1 centers, got k={self.k} with {self.centers.shape[0]}")
        if self.tags is not None and len(self.tags) != self.k:
            raise ValueError(f"{len(self.tags)} tags for {self.k} centers")
        if self.features not in CLUSTER_FEATURES:
            raise ValueError(f"features must be one of {CLUSTER_FEATURES}, got '{self.features}'")

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)

    def to_dict(self) -> Dict[str, Any]:
        return {'k': self.k, 'centers': self.centers, 'assignments': self.assignments, 'algorithm': self.algorithm,
                'tags': self.tags, 'converged': self.converged, 'iterations': self.iterations,
                'features': self.features, 'output_kind': self.output_kind}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ClusterModel":
        try:
            return cls(int(d['k']), np.array(d['centers'], dtype=np.float64),
                       np.array(d['assignments'], dtype=np.int64), d['algorithm'], d.get('tags'),
                       bool(d.get('converged', True)), int(d.get('iterations', 0)),
                       d.get('features', "outputs"), d.get('output_kind', "logits"))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Malformed cluster model document: {e}")


@dataclass
class Verdict:
    model_id: str
    method: Method
    score: float
    is_piracy: bool
    cluster: Optional[int] = None
    tag: Optional[str] = None
    kind_truth: Optional[str] = None

    def line(self) -> str:
        """One human-readable verdict line"""
        where = f" cluster={self.cluster} tag={self.tag}" if self.cluster is not None else ""
        return (f"{self.model_id}: {'piracy' if self.is_piracy else 'not piracy'} "
                f"(method={self.method.value} distance={self.score:.6g}{where})")

    def row(self) -> Dict[str, str]:
        return {'model_id': self.model_id, 'kind_truth': self.kind_truth or "",
                'method': self.method.value, 'distance': repr(float(self.score)),
                'cluster': "" if self.cluster is None else str(self.cluster),
                'is_piracy': "1" if self.is_piracy else "0"}

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "Verdict":
        return cls(row['model_id'], Method(row['method']), float(row['distance']), row['is_piracy'] == "1",
                   int(row['cluster']) if row['cluster'] else None, None, row['kind_truth'] or None)

# ============================================================================
# QUERIES & DISTANCES
# ============================================================================

def query_suspect(handle: Any, fp: Fingerprint, outputs: str = "logits") -> SuspectTranscript:
    """Query a score-exposing handle on every core point, in fingerprint order"""
    if not hasattr(handle, "logits"):
        raise TypeError("Identification needs a handle that exposes output scores")
    if outputs not in OUTPUT_KINDS:
        raise ValueError(f"outputs must be one of {OUTPUT_KINDS}, got '{outputs}'")
    points = fp.points
    if points.shape[1] != handle.dimension:
        raise ShapeError(f"Fingerprint points have dimension {points.shape[1]}; suspect expects {handle.dimension}")
    scores = np.atleast_2d(handle.logits(points))
    if outputs == "probabilities":
        scores = softmax(scores)
    return SuspectTranscript(getattr(handle, "model_id", "suspect"), fp.labels, scores, outputs)


def _check_pair(victim_t: SuspectTranscript, suspect_t: SuspectTranscript):
    if victim_t.shape != suspect_t.shape:
        raise ShapeError(f"Transcript shapes differ: {victim_t.shape} vs {suspect_t.shape}")
    if victim_t.labels != suspect_t.labels:
        raise ShapeError("Transcripts were taken on different core point labels")
    if victim_t.output_kind != suspect_t.output_kind:
        raise ShapeError(f"Cannot compare {victim_t.output_kind} against {suspect_t.output_kind} transcripts")


def l1_dist(victim_t: SuspectTranscript, suspect_t: SuspectTranscript) -> float:
    _check_pair(victim_t, suspect_t)
    return float(np.sum(np.abs(victim_t.target_scores() - suspect_t.target_scores())))


def cos_matrix(t: Union[SuspectTranscript, np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarity of transcript rows"""
    rows = t.outputs if isinstance(t, SuspectTranscript) else np.atleast_2d(np.asarray(t, dtype=np.float64))
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0):
        raise DegenerateTranscriptError(f"Transcript rows {np.flatnonzero(norms == 0).tolist()} have zero norm")
    unit = rows / norms[:, None]
    C = np.clip(unit @ unit.T, -1.0, 1.0)
    C = (C + C.T) / 2.0
    np.fill_diagonal(C, 1.0)
    return C


def cos_dist(victim_t: SuspectTranscript, suspect_t: SuspectTranscript) -> float:
    _check_pair(victim_t, suspect_t)
    n_f = victim_t.shape[0]
    return float(np.sum(np.abs(cos_matrix(victim_t) - cos_matrix(suspect_t))) / n_f ** 2)


def distance(method: Method, victim_t: SuspectTranscript, suspect_t: SuspectTranscript) -> float:
    if method is Method.L1:
        return l1_dist(victim_t, suspect_t)
    if method is Method.COS:
        return cos_dist(victim_t, suspect_t)
    raise ValueError("Cluster verdicts come from classify_suspect, not a pairwise distance")

# ============================================================================
# THRESHOLDS
# ============================================================================

def kind_group(kind: KindLike) -> str:
    """HM, PM, EM or VICTIM for a ModelKind or a kind/group string"""
    if isinstance(kind, ModelKind):
        return kind.group
    name = str(kind).upper()
    return ModelKind(name).group if name in ModelKind.__members__ else name


def calibrate_threshold(piracy_dists: Sequence[float],
                        homologous_dists: Sequence[float]) -> Tuple[float, float, bool]:
    """(threshold, margin, overlapping): midpoint of the gap, or the fewest-errors cut on overlap"""
    p = np.sort(np.asarray(piracy_dists, dtype=np.float64))
    h = np.sort(np.asarray(homologous_dists, dtype=np.float64))
    if p.size == 0 or h.size == 0:
        raise InsufficientDataError("Calibration needs at least one piracy and one homologous distance")
    margin = float(h[0] - p[-1])
    if margin > 0:
        return float((p[-1] + h[0]) / 2.0), margin, False

    values = np.unique(np.concatenate([p, h]))
    candidates = np.concatenate([(values[:-1] + values[1:]) / 2.0, [values[-1] + 1.0]])
    errors = [int(np.sum(p >= d) + np.sum(h < d)) for d in candidates]
    d = float(candidates[int(np.argmin(errors))])
    if d <= 0:
        d = float(np.nextafter(0.0, 1.0))
    return d, margin, True


def calibrate_thresholds(victim_t: SuspectTranscript,
                         population: Sequence[Tuple[SuspectTranscript, KindLike]]) -> Thresholds:
    """d1, d2 from the distances of a labelled HM/PM/EM population to the victim"""
    groups = [kind_group(kind) for _, kind in population]
    if "HM" not in groups or not any(g in ("PM", "EM") for g in groups):
        raise InsufficientDataError(f"Calibration population needs HM and piracy transcripts, got {sorted(set(groups))}")
    fitted = {}
    for method in (Method.L1, Method.COS):
        dists = [distance(method, victim_t, t) for t, _ in population]
        piracy = [d for d, g in zip(dists, groups) if g in ("PM", "EM")]
        homologous = [d for d, g in zip(dists, groups) if g == "HM"]
        fitted[method] = calibrate_threshold(piracy, homologous)
        d, margin, overlapping = fitted[method]
        if overlapping:
            logger.warning("%s distances overlap (margin %.4g); using best-separation threshold %.4g",
                           method.value, margin, d)
        else:
            logger.info("%s threshold %.4g with margin %.4g", method.value, d, margin)
    (d1, m1, o1), (d2, m2, o2) = fitted[Method.L1], fitted[Method.COS]
    return Thresholds(d1, d2, m1, m2, o1, o2)


def decide(victim_t: SuspectTranscript, suspect_t: SuspectTranscript, th: Thresholds,
           method: Method) -> Verdict:
    """Piracy iff distance < threshold"""
    if method is Method.CLUSTER:
        raise ValueError("Cluster verdicts come from classify_suspect")
    d = distance(method, victim_t, suspect_t)
    return Verdict(suspect_t.model_id, method, d, bool(d < th.for_method(method)))

# ============================================================================
# CLUSTERING
# ============================================================================

def cluster_features(t: SuspectTranscript, features: str = "outputs") -> np.ndarray:
    """Flattened transcript, or the upper triangle of its cosine matrix"""
    if features == "outputs":
        return t.flattened()
    if features == "cosine":
        C = cos_matrix(t)
        return C[np.triu_indices_from(C, 1)]
    raise ValueError(f"features must be one of {CLUSTER_FEATURES}, got '{features}'")


def _as_population(population: Union[np.ndarray, Sequence[Any]], features: str = "outputs") -> np.ndarray:
    if isinstance(population, np.ndarray):
        return np.atleast_2d(population.astype(np.float64))
    rows = [cluster_features(p, features) if isinstance(p, SuspectTranscript)
            else np.asarray(p, dtype=np.float64).ravel() for p in population]
    return np.stack(rows) if rows else np.zeros((0, 0))


def _population_kind(population: Union[np.ndarray, Sequence[Any]]) -> str:
    kinds = {p.output_kind for p in population if isinstance(p, SuspectTranscript)} \
        if not isinstance(population, np.ndarray) else set()
    if len(kinds) > 1:
        raise ShapeError(f"Population mixes output kinds {sorted(kinds)}")
    return kinds.pop() if kinds else "logits"


def _check_k(X: np.ndarray, k: int):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if X.shape[0] < k:
        raise InsufficientDataError(f"Population of {X.shape[0]} cannot form {k} clusters")


def majority_tags(assignments: np.ndarray, k: int, kinds: Sequence[KindLike]) -> List[str]:
    """Majority HM/PM/EM group per cluster; ties resolve in HM, PM, EM order"""
    groups = [kind_group(kind) for kind in kinds]
    if len(groups) != len(assignments):
        raise ValueError(f"{len(groups)} kinds for a population of {len(assignments)}")
    tags = []
    for j in range(k):
        counts = Counter(g for g, a in zip(groups, assignments) if a == j)
        best = max(TAG_ORDER, key=lambda g: (counts.get(g, 0), -TAG_ORDER.index(g)))
        tags.append(best)
    return tags


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(X.shape[0]))]
    for _ in range(1, k):
        d2 = np.min(cdist(X, X[chosen], "sqeuclidean"), axis=1)
        total = d2.sum()
        if total > 0:
            chosen.append(int(rng.choice(X.shape[0], p=d2 / total)))
        else:
            remaining = np.setdiff1d(np.arange(X.shape[0]), chosen)
            chosen.append(int(rng.choice(remaining)))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator,
           max_iters: int) -> Tuple[np.ndarray, np.ndarray, bool, int, float]:
    centers = _kmeans_pp(X, k, rng)
    assign: Optional[np.ndarray] = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        D = cdist(X, centers)
        new = np.argmin(D, axis=1)
        for j in range(k):
            if np.any(new == j):
                continue
            # re-seed an empty cluster at the point farthest from its center
            spread = D[np.arange(X.shape[0]), new]
            for idx in np.argsort(-spread, kind="stable"):
                if np.sum(new == new[idx]) > 1:
                    new[idx] = j
                    break
        if assign is not None and np.array_equal(new, assign):
            converged = True
            break
        assign = new
        centers = np.stack([X[assign == j].mean(axis=0) for j in range(k)])
    inertia = float(np.sum((X - centers[assign]) ** 2))
    return centers, assign, converged, it, inertia


def kmeans(population: Union[np.ndarray, Sequence[Any]], k: int, seed: int, max_iters: int = 100,
           kinds: Optional[Sequence[KindLike]] = None, n_init: int = 1,
           features: str = "outputs") -> ClusterModel:
    """Lloyd's algorithm from k-means++ seeds; the lowest-inertia of n_init runs wins"""
    X = _as_population(population, features)
    _check_k(X, k)
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if n_init < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")
    rng = np.random.default_rng(seed)
    best = None
    for run in range(n_init):
        result = _lloyd(X, k, rng, max_iters)
        logger.debug("k-means run %d: inertia %.6g after %d iterations", run, result[4], result[3])
        if best is None or result[4] < best[4]:
            best = result
    centers, assign, converged, it, _ = best

    tags = majority_tags(assign, k, kinds) if kinds is not None else None
    return ClusterModel(k, centers, assign, "kmeans", tags, converged, it, features, _population_kind(population))


def agglomerative(population: Union[np.ndarray, Sequence[Any]], k: int,
                  kinds: Optional[Sequence[KindLike]] = None, features: str = "outputs") -> ClusterModel:
    """Bottom-up average-linkage merging; the lowest-index pair wins ties"""
    X = _as_population(population, features)
    _check_k(X, k)
    clusters: List[List[int]] = [[i] for i in range(X.shape[0])]
    L = cdist(X, X)
    np.fill_diagonal(L, np.inf)
    while len(clusters) > k:
        upper = np.triu(L, 1)
        upper[np.tril_indices_from(upper)] = np.inf
        i, j = np.unravel_index(int(np.argmin(upper)), upper.shape)
        ni, nj = len(clusters[i]), len(clusters[j])
        merged = (ni * L[i] + nj * L[j]) / (ni + nj)
        L[i, :] = merged
        L[:, i] = merged
        L[i, i] = np.inf
        L = np.delete(np.delete(L, j, axis=0), j, axis=1)
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]

    assign = np.empty(X.shape[0], dtype=np.int64)
    for c, members in enumerate(clusters):
        assign[members] = c
    centers = np.stack([X[members].mean(axis=0) for members in clusters])
    tags = majority_tags(assign, k, kinds) if kinds is not None else None
    return ClusterModel(k, centers, assign, "agglomerative-average", tags, True, X.shape[0] - k,
                        features, _population_kind(population))


def classify_suspect(cm: ClusterModel, o_s: Union[SuspectTranscript, np.ndarray],
                     model_id: Optional[str] = None) -> Verdict:
    """Nearest center by Euclidean distance; piracy iff its tag is PM or EM"""
    if cm.tags is None:
        raise ValueError("ClusterModel has no HM/PM/EM tags; fit it with kinds")
    if isinstance(o_s, SuspectTranscript):
        if o_s.output_kind != cm.output_kind:
            raise ShapeError(f"Cluster model was fitted on {cm.output_kind}, suspect gives {o_s.output_kind}")
        model_id = model_id or o_s.model_id
        o = cluster_features(o_s, cm.features)
    else:
        o = np.asarray(o_s, dtype=np.float64).ravel()
    if o.shape[0] != cm.centers.shape[1]:
        raise ShapeError(f"Suspect features of length {o.shape[0]}; centers have {cm.centers.shape[1]}")
    dists = np.linalg.norm(cm.centers - o, axis=1)
    j = int(np.argmin(dists))
    tag = cm.tags[j]
    return Verdict(model_id or "suspect", Method.CLUSTER, float(dists[j]), tag in ("PM", "EM"), j, tag)

# ============================================================================
# PERSISTENCE
# ============================================================================

def save_transcript(t: SuspectTranscript, path: Union[str, Path]) -> str:
    return dump_json(path, "transcript", t.to_dict())


def load_transcript(path: Union[str, Path]) -> SuspectTranscript:
    return SuspectTranscript.from_dict(load_json(path, "transcript"))


def save_thresholds(th: Thresholds, path: Union[str, Path]) -> str:
    return dump_json(path, "thresholds", th.to_dict())


def load_thresholds(path: Union[str, Path]) -> Thresholds:
    return Thresholds.from_dict(load_json(path, "thresholds"))


def verdicts_csv(verdicts: Sequence[Verdict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=VERDICT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for v in verdicts:
        writer.writerow(v.row())
    return buf.getvalue()


def read_verdicts_csv(path: Union[str, Path]) -> List[Verdict]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != VERDICT_COLUMNS:
            raise SchemaError(f"{path}: expected columns {VERDICT_COLUMNS}, got {reader.fieldnames}")
        return [Verdict.from_row(row) for row in reader]


def save_cluster_model(cm: ClusterModel, path: Union[str, Path]) -> str:
    return dump_json(path, "cluster_model", cm.to_dict())


def load_cluster_model(path: Union[str, Path]) -> ClusterModel:
    return ClusterModel.from_dict(load_json(path, "cluster_model"))
