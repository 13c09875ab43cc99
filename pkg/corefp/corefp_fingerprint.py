#!/usr/bin/env python3
"""
COREFP-FINGERPRINT: Core points far from the victim's decision boundary

For every label i a core point phi_i is pushed down the loss -log softmax(f(phi_i))_i
in bursts of gradient steps. After each burst the DeepFool radius r_i (L2 norm of the
accumulated minimal perturbation that flips the prediction) is measured; generation
stops once |r_new - r_old| < gamma or the epoch cap is reached.

The fingerprint F is the set of core points, at most one per label, optionally reduced
to the top-k points by radius.

Usage:
    fp = generate_fingerprint(victim.net, CoreGenConfig(seed=1), init_pool=split.victim)
    for cp in fp.core_points:
        print(cp.label, cp.radius, cp.score)
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from .corefp_core import (CoreGenerationError, DegenerateGeometryError, SchemaError,
                          ShapeError, derive_seed, dump_json, load_json)
from .corefp_data import LabeledDataset
from .corefp_nn import Network, forward, grad_loss_input, jacobian, softmax

logger = logging.getLogger(__name__)

# distances at or below this count as lying on a decision boundary
BOUNDARY_TOL = 1e-10

# ============================================================================
# CONFIG & TYPES
# ============================================================================

class InitMode(Enum):
    FROM_DATA = "FROM_DATA"
    UNIFORM_NOISE = "UNIFORM_NOISE"


@dataclass(frozen=True)
class CoreGenConfig:
    theta: float = 0.1
    gamma: float = 1e-2
    outer_max_epochs: int = 2000
    burst: int = 100
    deepfool_max_iters: int = 50
    overshoot: float = 0.02
    clip_box: Optional[Tuple[float, float]] = None
    init: InitMode = InitMode.FROM_DATA
    seed: int = 0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.outer_max_epochs < 1 or self.burst < 1 or self.deepfool_max_iters < 1:
            raise ValueError("epoch cap, burst and DeepFool cap must be >= 1")
        if self.overshoot < 0:
            raise ValueError(f"overshoot must be non-negative, got {self.overshoot}")
        if self.clip_box is not None:
            lo, hi = self.clip_box
            if not lo < hi:
                raise ValueError(f"clip_box must satisfy lo < hi, got {self.clip_box}")
            object.__setattr__(self, 'clip_box', (float(lo), float(hi)))
        object.__setattr__(self, 'init', InitMode(self.init))

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d['init'] = self.init.value
        d['clip_box'] = list(self.clip_box) if self.clip_box else None
        if d['gamma'] == float('inf'):
            d['gamma'] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CoreGenConfig":
        d = dict(d)
        if 'clip_box' in d and d['clip_box'] is not None:
            d['clip_box'] = tuple(d['clip_box'])
        if 'init' in d:
            d['init'] = InitMode(d['init'])
        if 'gamma' in d:
            d['gamma'] = float(d['gamma'])
        return cls(**d)


@dataclass
class DeepFoolResult:
    radius: float
    iters: int
    final_label: int
    converged: bool
    perturbation: np.ndarray


@dataclass
class Checkpoint:
    epoch: int
    score: float
    confidence: float
    radius: float
    classified: bool
    point: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class CorePoint:
    label: int
    point: np.ndarray
    radius: float
    score: float
    epochs_used: int
    confidence: float
    converged: bool
    checkpoints: List[Checkpoint] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {'label': self.label, 'point': self.point, 'radius': self.radius, 'score': self.score,
                'epochs_used': self.epochs_used, 'confidence': self.confidence, 'converged': self.converged,
                'checkpoints': [c.to_dict() for c in self.checkpoints]}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CorePoint":
        checkpoints = [Checkpoint(int(c['epoch']), float(c['score']), float(c['confidence']), float(c['radius']),
                                  bool(c['classified']), np.array(c['point'], dtype=np.float64))
                       for c in d.get('checkpoints', [])]
        return cls(int(d['label']), np.array(d['point'], dtype=np.float64), float(d['radius']), float(d['score']),
                   int(d['epochs_used']), float(d['confidence']), bool(d['converged']), checkpoints)


@dataclass
class Fingerprint:
    """F = {phi_i}: at most one core point per label, in label order"""
    core_points: List[CorePoint]
    victim_id: str
    config: Dict[str, Any] = field(default_factory=dict)
    victim_outputs: Optional[np.ndarray] = None
    output_kind: str = "logits"

    def __post_init__(self):
        if not self.core_points:
            raise ValueError("A fingerprint needs at least one core point")
        labels = [cp.label for cp in self.core_points]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Core point labels must be distinct, got {labels}")
        if self.output_kind not in ("logits", "probabilities"):
            raise ValueError(f"Unknown output kind '{self.output_kind}'")

    def __len__(self) -> int:
        return len(self.core_points)

    @property
    def labels(self) -> List[int]:
        return [cp.label for cp in self.core_points]

    @property
    def points(self) -> np.ndarray:
        return np.stack([cp.point for cp in self.core_points])

    @property
    def radii(self) -> np.ndarray:
        return np.array([cp.radius for cp in self.core_points])

    def checkpoint_epochs(self) -> List[int]:
        """Epochs checkpointed for every core point"""
        common = set(c.epoch for c in self.core_points[0].checkpoints)
        for cp in self.core_points[1:]:
            common &= set(c.epoch for c in cp.checkpoints)
        return sorted(common)

    def at_epoch(self, epoch: int) -> "Fingerprint":
        """Fingerprint made of each point's latest checkpoint at or before `epoch`"""
        points = []
        for cp in self.core_points:
            eligible = [c for c in cp.checkpoints if c.epoch <= epoch]
            if not eligible:
                raise ValueError(f"Label {cp.label} has no checkpoint at or before epoch {epoch}")
            c = eligible[-1]
            points.append(CorePoint(cp.label, c.point.copy(), c.radius, c.score, c.epoch, c.confidence,
                                    cp.converged and c.epoch == cp.epochs_used, list(eligible)))
        return Fingerprint(points, self.victim_id, {**self.config, 'epoch': epoch})

    def initial(self) -> "Fingerprint":
        """The randomly drawn starting samples used as a fingerprint"""
        return self.at_epoch(0)

    def to_dict(self) -> Dict[str, Any]:
        return {'victim_id': self.victim_id, 'config': self.config,
                'core_points': [cp.to_dict() for cp in self.core_points],
                'victim_outputs': self.victim_outputs, 'output_kind': self.output_kind}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Fingerprint":
        try:
            outputs = d.get('victim_outputs')
            return cls([CorePoint.from_dict(c) for c in d['core_points']], d['victim_id'], d.get('config', {}),
                       None if outputs is None else np.array(outputs, dtype=np.float64),
                       d.get('output_kind', "logits"))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Malformed fingerprint document: {e}")

# ============================================================================
# LOSS & RADIUS
# ============================================================================

def core_loss(net: Network, phi: np.ndarray, label: int) -> float:
    """-log softmax(f(phi))[label]"""
    if not 0 <= label < net.n_classes:
        raise ShapeError(f"Label {label} outside 0..{net.n_classes - 1}")
    return float(-log_softmax(forward(net, phi))[label])


def deepfool_radius(net: Network, x: np.ndarray, cfg: Optional[CoreGenConfig] = None, *,
                    overshoot: Optional[float] = None, max_iters: Optional[int] = None) -> DeepFoolResult:
    """Iterated minimal perturbation across the nearest linearized boundary"""
    cfg = cfg or CoreGenConfig()
    overshoot = cfg.overshoot if overshoot is None else overshoot
    max_iters = cfg.deepfool_max_iters if max_iters is None else max_iters
    x = np.asarray(x, dtype=np.float64)
    b = int(np.argmax(forward(net, x)))
    r_tot = np.zeros_like(x)

    for it in range(max_iters):
        z = forward(net, x + r_tot)
        current = int(np.argmax(z))
        if current != b:
            return DeepFoolResult(float(np.linalg.norm(r_tot)), it, current, True, r_tot)

        J = jacobian(net, x + r_tot)
        w = J - J[b]
        f = z - z[b]
        norms = np.linalg.norm(w, axis=1)
        dist = np.full(len(z), np.inf)
        usable = (np.arange(len(z)) != b) & (norms > 0)
        if not np.any(usable):
            raise DegenerateGeometryError(f"All gradient differences vanish at iteration {it}")
        dist[usable] = np.abs(f[usable]) / norms[usable]
        l_hat = int(np.argmin(dist))
        if dist[l_hat] <= BOUNDARY_TOL:
            return DeepFoolResult(float(np.linalg.norm(r_tot)), it, l_hat, True, r_tot)

        r_tot = r_tot + (1.0 + overshoot) * (np.abs(f[l_hat]) / norms[l_hat] ** 2) * w[l_hat]

    final = int(np.argmax(forward(net, x + r_tot)))
    return DeepFoolResult(float(np.linalg.norm(r_tot)), max_iters, final, final != b, r_tot)

# ============================================================================
# CORE POINT GENERATION
# ============================================================================

def _initial_point(net: Network, label: int, cfg: CoreGenConfig, rng: np.random.Generator,
                   init_pool: Optional[LabeledDataset]) -> np.ndarray:
    if cfg.init is InitMode.FROM_DATA:
        if init_pool is None:
            raise ValueError("FROM_DATA initialization needs an init_pool dataset")
        candidates = np.flatnonzero(init_pool.ys == label)
        if candidates.size == 0:
            raise ValueError(f"init_pool '{init_pool.name}' holds no sample of label {label}")
        return init_pool.xs[candidates[rng.integers(candidates.size)]].copy()
    lo, hi = cfg.clip_box or (0.0, 1.0)
    return rng.uniform(lo, hi, size=net.input_dim)


def _checkpoint(net: Network, phi: np.ndarray, label: int, epoch: int, cfg: CoreGenConfig) -> Checkpoint:
    z = forward(net, phi)
    radius = deepfool_radius(net, phi, cfg).radius
    return Checkpoint(epoch, float(z[label]), float(softmax(z)[label]), radius,
                      int(np.argmax(z)) == label, phi.copy())


def generate_core_point(net: Network, label: int, cfg: CoreGenConfig,
                        init_pool: Optional[LabeledDataset] = None,
                        init_point: Optional[np.ndarray] = None) -> CorePoint:
    """Descend the core loss in bursts until the DeepFool radius settles"""
    if not 0 <= label < net.n_classes:
        raise ShapeError(f"Label {label} outside 0..{net.n_classes - 1}")
    rng = np.random.default_rng(derive_seed(cfg.seed, "coregen", label))
    if init_point is not None:
        phi = np.asarray(init_point, dtype=np.float64).copy()
    else:
        phi = _initial_point(net, label, cfg, rng, init_pool)
    if phi.shape != (net.input_dim,):
        raise ShapeError(f"Initial point of shape {phi.shape} rejected; expected ({net.input_dim},)")
    if cfg.clip_box:
        phi = np.clip(phi, *cfg.clip_box)

    checkpoints = [_checkpoint(net, phi, label, 0, cfg)]
    radius = checkpoints[0].radius
    epochs = 0
    converged = False
    while epochs < cfg.outer_max_epochs:
        steps = min(cfg.burst, cfg.outer_max_epochs - epochs)
        for _ in range(steps):
            phi = phi - cfg.theta * grad_loss_input(net, phi, label)
            if cfg.clip_box:
                phi = np.clip(phi, *cfg.clip_box)
        epochs += steps
        checkpoints.append(_checkpoint(net, phi, label, epochs, cfg))
        delta = abs(checkpoints[-1].radius - radius)
        radius = checkpoints[-1].radius
        logger.debug("label %d epoch %d: score %.4f radius %.6f delta %.3g",
                     label, epochs, checkpoints[-1].score, radius, delta)
        if delta < cfg.gamma:
            converged = True
            break

    final = checkpoints[-1]
    if not converged:
        classified = [c for c in checkpoints if c.classified]
        if classified:
            final = max(classified, key=lambda c: (c.radius, c.epoch))
        logger.warning("label %d: radius did not settle within %d epochs; keeping epoch %d (radius %.4f)",
                       label, cfg.outer_max_epochs, final.epoch, final.radius)
    else:
        logger.info("label %d converged after %d epochs: score %.4f radius %.4f",
                    label, epochs, final.score, final.radius)
    kept = [c for c in checkpoints if c.epoch <= final.epoch]
    return CorePoint(label, final.point.copy(), final.radius, final.score, final.epoch,
                     final.confidence, converged, kept)


def generate_fingerprint(net: Network, cfg: CoreGenConfig, top_k: Optional[int] = None,
                         init_pool: Optional[LabeledDataset] = None, threads: int = 1,
                         victim_id: str = "victim", labels: Optional[Sequence[int]] = None) -> Fingerprint:
    """One core point per label, optionally keeping the top_k largest radii"""
    labels = list(range(net.n_classes)) if labels is None else [int(l) for l in labels]
    if top_k is not None and not 1 <= top_k <= len(labels):
        raise ValueError(f"top_k must lie in 1..{len(labels)}, got {top_k}")

    def run(label: int):
        try:
            return generate_core_point(net, label, cfg, init_pool)
        except ValueError as e:
            return e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, labels))
    else:
        outcomes = [run(l) for l in labels]

    done: Dict[int, Any] = {}
    for label, outcome in zip(labels, outcomes):
        if isinstance(outcome, Exception):
            raise CoreGenerationError(f"Core point for label {label} failed: {outcome}", partial=done)
        if int(np.argmax(forward(net, outcome.point))) != label:
            raise CoreGenerationError(f"Core point for label {label} is classified as "
                                      f"{int(np.argmax(forward(net, outcome.point)))}", partial=done)
        done[label] = {'radius': outcome.radius, 'score': outcome.score, 'epochs_used': outcome.epochs_used}

    points = list(outcomes)
    if top_k is not None:
        keep = sorted(points, key=lambda cp: (-cp.radius, cp.label))[:top_k]
        points = sorted(keep, key=lambda cp: cp.label)
    return Fingerprint(points, victim_id, {**cfg.to_dict(), 'top_k': top_k})

# ============================================================================
# PERSISTENCE
# ============================================================================

def save_fingerprint(fp: Fingerprint, path: Union[str, Path]) -> str:
    return dump_json(path, "fingerprint", fp.to_dict())


def load_fingerprint(path: Union[str, Path]) -> Fingerprint:
    return Fingerprint.from_dict(load_json(path, "fingerprint"))
