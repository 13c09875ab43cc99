#!/usr/bin/env python3
"""
COREFP-DATA: Datasets and the victim / homologous / attacker partition

- Gaussian-mixture synthetic data clipped to [0,1]^M (desk-scale default)
- CIFAR-10 binary batch loader with optional average-pool downsampling
- Class-stratified 2:2:1 split with controllable homologous/victim overlap

Usage:
    data = make_synthetic(n_classes=5, dim=16, n_per_class=120, spread=0.08, seed=1)
    plan = split_225(data, overlap=0.5, seed=1)
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .corefp_core import (DatasetFormatError, InsufficientDataError, SchemaError, ShapeError,
                          dump_json, load_json)

logger = logging.getLogger(__name__)

CIFAR10_RECORD = 3073
CIFAR10_SIDE = 32
OVERLAP_GRID = tuple(round(0.1 * i, 1) for i in range(11))

# ============================================================================
# DATASET
# ============================================================================

@dataclass
class LabeledDataset:
    """Samples in [0,1]^M with labels in 0..n_classes-1; ids identify source samples"""
    xs: np.ndarray
    ys: np.ndarray
    name: str
    n_classes: int
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        if self.xs.ndim != 2:
            raise ShapeError(f"Dataset '{self.name}': xs must be 2-D, got shape {self.xs.shape}")
        if len(self.xs) != len(self.ys):
            raise ShapeError(f"Dataset '{self.name}': {len(self.xs)} samples but {len(self.ys)} labels")
        self.ids = np.arange(len(self.ys)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if len(self.ids) != len(self.ys):
            raise ShapeError(f"Dataset '{self.name}': ids length mismatch")
        if len(self.ys) and (self.ys.min() < 0 or self.ys.max() >= self.n_classes):
            raise ValueError(f"Dataset '{self.name}': labels outside 0..{self.n_classes - 1}")
        if self.xs.size and (self.xs.min() < 0.0 or self.xs.max() > 1.0 or not np.all(np.isfinite(self.xs))):
            raise ValueError(f"Dataset '{self.name}': samples must lie in [0,1]^M")

    def __len__(self) -> int:
        return len(self.ys)

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.xs[idx], self.ys[idx], name or self.name, self.n_classes, self.ids[idx])

    def relabeled(self, ys: np.ndarray, name: str) -> "LabeledDataset":
        return LabeledDataset(self.xs, ys, name, self.n_classes, self.ids)

    def class_counts(self) -> List[int]:
        return np.bincount(self.ys, minlength=self.n_classes).tolist()

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'n_classes': self.n_classes, 'dim': self.dim,
                'xs': self.xs, 'ys': self.ys, 'ids': self.ids}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "LabeledDataset":
        try:
            xs = np.array(d['xs'], dtype=np.float64).reshape(-1, int(d['dim']))
            return cls(xs, np.array(d['ys'], dtype=np.int64), d['name'], int(d['n_classes']),
                       np.array(d['ids'], dtype=np.int64))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Malformed dataset document: {e}")


def concat(parts: Sequence[LabeledDataset], name: str) -> LabeledDataset:
    return LabeledDataset(np.concatenate([p.xs for p in parts]), np.concatenate([p.ys for p in parts]),
                          name, parts[0].n_classes, np.concatenate([p.ids for p in parts]))


def overlap_ratio(homologous: LabeledDataset, victim: LabeledDataset) -> float:
    """|X_h ∩ X_v| / |X_v| measured on source-sample identities"""
    if len(victim) == 0:
        raise InsufficientDataError("overlap against an empty victim set is undefined")
    return len(np.intersect1d(homologous.ids, victim.ids)) / len(victim)

# ============================================================================
# GENERATORS & LOADERS
# ============================================================================

def make_synthetic(n_classes: int, dim: int, n_per_class: int, spread: float, seed: int,
                   max_attempts: int = 10000) -> LabeledDataset:
    """Per-class Gaussians clipped to [0,1]^dim, means pairwise >= 4*spread apart"""
    if n_classes < 2 or dim < 2 or n_per_class < 1 or not spread > 0:
        raise ValueError(f"Degenerate synthetic parameters: classes={n_classes}, dim={dim}, "
                         f"n_per_class={n_per_class}, spread={spread}")
    rng = np.random.default_rng(seed)
    margin = min(0.25, 1.5 * spread)
    means: List[np.ndarray] = []
    attempts = 0
    while len(means) < n_classes:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(f"Degenerate synthetic parameters: cannot place {n_classes} means "
                             f"{4 * spread:.3f} apart in [0,1]^{dim}")
        candidate = rng.uniform(margin, 1.0 - margin, size=dim)
        if all(np.linalg.norm(candidate - m) >= 4.0 * spread for m in means):
            means.append(candidate)

    xs = np.concatenate([np.clip(m + spread * rng.standard_normal((n_per_class, dim)), 0.0, 1.0) for m in means])
    ys = np.repeat(np.arange(n_classes), n_per_class)
    logger.info("synthetic dataset: %d classes x %d samples in [0,1]^%d", n_classes, n_per_class, dim)
    return LabeledDataset(xs, ys, f"synthetic-{n_classes}x{dim}", n_classes)


def load_cifar10_binary(path: Union[str, Path], downsample: Optional[int] = None,
                        limit: Optional[int] = None) -> LabeledDataset:
    """Parse a CIFAR-10 binary batch: 1 label byte + 3x1024 pixel bytes per record"""
    raw = Path(path).read_bytes()
    complete = len(raw) // CIFAR10_RECORD
    if len(raw) % CIFAR10_RECORD:
        raise DatasetFormatError(f"{path}: truncated record {complete} "
                                 f"({len(raw) % CIFAR10_RECORD} of {CIFAR10_RECORD} bytes)",
                                 offset=complete * CIFAR10_RECORD)
    if complete == 0:
        raise DatasetFormatError(f"{path}: no records", offset=0)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(complete, CIFAR10_RECORD)
    if limit is not None:
        records = records[:limit]
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DatasetFormatError(f"{path}: label byte {labels[bad[0]]} > 9 in record {bad[0]}",
                                 offset=int(bad[0]) * CIFAR10_RECORD)

    pixels = records[:, 1:].astype(np.float64) / 255.0
    if downsample and downsample > 1:
        if CIFAR10_SIDE % downsample:
            raise ValueError(f"downsample factor {downsample} must divide {CIFAR10_SIDE}")
        side = CIFAR10_SIDE // downsample
        images = pixels.reshape(-1, 3, side, downsample, side, downsample)
        pixels = images.mean(axis=(3, 5)).reshape(len(records), -1)
    return LabeledDataset(pixels, labels, Path(path).stem, 10)

# ============================================================================
# SPLITS
# ============================================================================

@dataclass
class SplitPlan:
    """Victim / homologous / attacker partition; pool is the fresh homologous reservoir"""
    victim: LabeledDataset
    homologous: LabeledDataset
    attacker: LabeledDataset
    overlap: float
    seed: int
    pool: LabeledDataset

    def with_overlap(self, overlap: float) -> "SplitPlan":
        """Same victim and attacker sets, homologous set rebuilt for another overlap"""
        homologous = _homologous_set(self.victim, self.pool, overlap, self.seed)
        return SplitPlan(self.victim, homologous, self.attacker, overlap, self.seed, self.pool)

    def summary(self) -> Dict[str, Any]:
        return {'victim': len(self.victim), 'homologous': len(self.homologous), 'attacker': len(self.attacker),
                'overlap': self.overlap, 'measured_overlap': overlap_ratio(self.homologous, self.victim),
                'seed': self.seed}


def _allocate_shared(victim_counts: List[int], total: int) -> List[int]:
    """Spread `total` shared samples over classes in proportion, largest remainder first"""
    grand = sum(victim_counts)
    exact = [total * c / grand for c in victim_counts]
    shares = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - shares[i]), i))
    for i in order[:total - sum(shares)]:
        shares[i] += 1
    return shares


def _homologous_set(victim: LabeledDataset, pool: LabeledDataset, overlap: float, seed: int) -> LabeledDataset:
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must lie in [0,1], got {overlap}")
    rng = np.random.default_rng([seed, int(round(overlap * 1e6))])
    shared_total = int(np.floor(overlap * len(victim) + 1e-9))
    shares = _allocate_shared(victim.class_counts(), shared_total)
    chosen_v, chosen_p = [], []
    for c in range(victim.n_classes):
        v_idx = np.flatnonzero(victim.ys == c)
        p_idx = np.flatnonzero(pool.ys == c)
        fresh = len(v_idx) - shares[c]
        if fresh > len(p_idx):
            raise InsufficientDataError(f"class {c}: pool holds {len(p_idx)} samples, {fresh} needed")
        chosen_v.extend(rng.permutation(v_idx)[:shares[c]].tolist())
        chosen_p.extend(rng.permutation(p_idx)[:fresh].tolist())
    parts = [victim.subset(sorted(chosen_v)), pool.subset(sorted(chosen_p))]
    return concat(parts, f"{victim.name.rsplit('/', 1)[0]}/homologous")


def split_225(data: LabeledDataset, overlap: float, seed: int) -> SplitPlan:
    """Class-stratified victim:homologous:attacker = 2:2:1 with overlap(X_h, X_v) = overlap"""
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must lie in [0,1], got {overlap}")
    if len(data) < 5 * data.n_classes:
        raise InsufficientDataError(f"{len(data)} samples cannot be split 2:2:1 over {data.n_classes} classes")
    rng = np.random.default_rng(seed)
    victim_idx, pool_idx, attacker_idx = [], [], []
    for c in range(data.n_classes):
        idx = rng.permutation(np.flatnonzero(data.ys == c))
        n_c = len(idx)
        if n_c < 5:
            raise InsufficientDataError(f"class {c} has {n_c} samples; at least 5 required")
        n_att = n_c // 5
        n_vic = (n_c - n_att) // 2
        attacker_idx.extend(idx[:n_att].tolist())
        victim_idx.extend(idx[n_att:n_att + n_vic].tolist())
        pool_idx.extend(idx[n_att + n_vic:].tolist())

    victim = data.subset(sorted(victim_idx), f"{data.name}/victim")
    pool = data.subset(sorted(pool_idx), f"{data.name}/pool")
    attacker = data.subset(sorted(attacker_idx), f"{data.name}/attacker")
    homologous = _homologous_set(victim, pool, overlap, seed)
    plan = SplitPlan(victim, homologous, attacker, overlap, seed, pool)
    logger.info("split %s: %s", data.name, plan.summary())
    return plan

# ============================================================================
# PERSISTENCE
# ============================================================================

def save_dataset(data: LabeledDataset, path: Union[str, Path]) -> str:
    return dump_json(path, "dataset", data.to_dict())


def load_dataset(path: Union[str, Path]) -> LabeledDataset:
    return LabeledDataset.from_dict(load_json(path, "dataset"))
