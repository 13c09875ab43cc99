#!/usr/bin/env python3
"""
COREFP-NN: Minimal differentiable feed-forward classifiers
Dense + ReLU/tanh networks in 64-bit floats with reverse-mode gradients

- forward / softmax on single inputs or batches
- input gradients of any logit (DeepFool) and of the cross-entropy loss (core points, PGD)
- seeded SGD training with layer freezing, soft targets, unit masks and batch augmentation
- exact structured-text round trip of architecture + parameters

Usage:
    from corefp.corefp_nn import ArchSpec, init_network, train, forward
    net = init_network(ArchSpec("mlp-a", (32, 32)), in_dim=16, n_classes=5, seed=7)
"""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.special import log_softmax
from scipy.special import softmax as _softmax

from .corefp_core import (DivergenceError, InsufficientDataError, SchemaError, ShapeError,
                          dump_json, generate_content_hash, load_json)

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")

# ============================================================================
# ARCHITECTURE TYPES
# ============================================================================

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in ("dense",) + ACTIVATIONS:
            raise ValueError(f"Unknown layer kind: {self.kind}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"Layer dimensions must be positive, got {self.in_dim}->{self.out_dim}")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ValueError("Activation layers preserve dimension")


@dataclass(frozen=True)
class ArchSpec:
    """Recipe for an MLP: hidden widths and one activation kind"""
    arch_id: str
    hidden: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation: {self.activation}")
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))

    def to_dict(self) -> Dict[str, Any]:
        return {'arch_id': self.arch_id, 'hidden': list(self.hidden), 'activation': self.activation}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ArchSpec":
        return cls(d['arch_id'], tuple(d.get('hidden', ())), d.get('activation', 'relu'))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0
    l2_penalty: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2_penalty < 0:
            raise ValueError(f"l2_penalty must be non-negative, got {self.l2_penalty}")

    def to_dict(self) -> Dict[str, Any]:
        return {'epochs': self.epochs, 'learning_rate': self.learning_rate,
                'batch_size': self.batch_size, 'seed': self.seed, 'l2_penalty': self.l2_penalty}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        return cls(**{k: d[k] for k in ('epochs', 'learning_rate', 'batch_size', 'seed', 'l2_penalty') if k in d})


def build_layers(arch: ArchSpec, in_dim: int, n_classes: int) -> List[LayerSpec]:
    layers = []
    width = in_dim
    for h in arch.hidden:
        layers.append(LayerSpec("dense", width, h))
        layers.append(LayerSpec(arch.activation, h, h))
        width = h
    layers.append(LayerSpec("dense", width, n_classes))
    return layers

# ============================================================================
# NETWORK
# ============================================================================

Params = Optional[Tuple[np.ndarray, np.ndarray]]


class Network:
    """Feed-forward classifier f: [0,1]^M -> R^N"""

    def __init__(self, layers: Sequence[LayerSpec], params: Sequence[Params], arch_id: str,
                 unit_masks: Optional[Dict[int, np.ndarray]] = None,
                 meta: Optional[Dict[str, Any]] = None):
        self.layers = list(layers)
        self.params = [None if p is None else (np.asarray(p[0], dtype=np.float64),
                                               np.asarray(p[1], dtype=np.float64)) for p in params]
        self.arch_id = arch_id
        self.unit_masks = {int(k): np.asarray(v, dtype=bool) for k, v in (unit_masks or {}).items()}
        self.meta = dict(meta or {})
        self._check()

    def _check(self):
        if not self.layers or self.layers[-1].kind != "dense":
            raise ShapeError("Network must end with a dense layer")
        if len(self.params) != len(self.layers):
            raise ShapeError("One parameter slot per layer required")
        for i, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"Layer {i} outputs {prev.out_dim} but layer {i + 1} expects {nxt.in_dim}")
        for i, (layer, p) in enumerate(zip(self.layers, self.params)):
            if layer.kind == "dense":
                if p is None:
                    raise ShapeError(f"Dense layer {i} has no parameters")
                W, b = p
                if W.shape != (layer.out_dim, layer.in_dim) or b.shape != (layer.out_dim,):
                    raise ShapeError(f"Dense layer {i}: weight {W.shape} / bias {b.shape} "
                                     f"do not match {layer.out_dim}x{layer.in_dim}")
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                    raise ValueError(f"Dense layer {i} has non-finite parameters")
            elif p is not None:
                raise ShapeError(f"Activation layer {i} cannot carry parameters")
        for idx, mask in self.unit_masks.items():
            if idx >= len(self.layers) or self.layers[idx].kind != "dense" or mask.shape != (self.layers[idx].out_dim,):
                raise ShapeError(f"Unit mask on layer {idx} does not match a dense layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dense_indices(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "dense"]

    def copy(self) -> "Network":
        return Network(self.layers, [None if p is None else (p[0].copy(), p[1].copy()) for p in self.params],
                       self.arch_id, {k: v.copy() for k, v in self.unit_masks.items()},
                       copy.deepcopy(self.meta))

    def apply_masks(self):
        """Zero incoming and outgoing weights of masked units (in place)"""
        dense = self.dense_indices
        for idx, mask in self.unit_masks.items():
            W, b = self.params[idx]
            W[~mask, :] = 0.0
            b[~mask] = 0.0
            following = [d for d in dense if d > idx]
            if following:
                self.params[following[0]][0][:, ~mask] = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'arch_id': self.arch_id,
            'layers': [{'kind': l.kind, 'in_dim': l.in_dim, 'out_dim': l.out_dim} for l in self.layers],
            'params': [None if p is None else {'W': p[0], 'b': p[1]} for p in self.params],
            'unit_masks': {str(k): v for k, v in sorted(self.unit_masks.items())},
            'meta': self.meta,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Network":
        try:
            layers = [LayerSpec(l['kind'], int(l['in_dim']), int(l['out_dim'])) for l in d['layers']]
            params = [None if p is None else (np.array(p['W'], dtype=np.float64).reshape(layer.out_dim, layer.in_dim),
                                              np.array(p['b'], dtype=np.float64))
                      for layer, p in zip(layers, d['params'])]
            masks = {int(k): np.array(v, dtype=bool) for k, v in d.get('unit_masks', {}).items()}
            arch_id = d['arch_id']
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Malformed network document: {e}")
        return cls(layers, params, arch_id, masks, d.get('meta', {}))

    @property
    def param_hash(self) -> str:
        return generate_content_hash({'layers': self.to_dict()['layers'], 'params': self.to_dict()['params']})


def init_network(arch: ArchSpec, in_dim: int, n_classes: int, seed: int) -> Network:
    """Fresh network, weights and biases uniform in +-1/sqrt(fan_in)"""
    rng = np.random.default_rng(seed)
    layers = build_layers(arch, in_dim, n_classes)
    params: List[Params] = []
    for layer in layers:
        if layer.kind == "dense":
            bound = 1.0 / np.sqrt(layer.in_dim)
            W = rng.uniform(-bound, bound, size=(layer.out_dim, layer.in_dim))
            b = rng.uniform(-bound, bound, size=layer.out_dim)
            params.append((W, b))
        else:
            params.append(None)
    return Network(layers, params, arch.arch_id, meta={'init_seed': int(seed)})

# ============================================================================
# FORWARD / BACKWARD
# ============================================================================

def _as_batch(net: Network, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"Input of shape {x.shape} rejected; network expects dimension {net.input_dim}")
    return X, single


def _forward_cache(net: Network, X: np.ndarray) -> List[np.ndarray]:
    acts = [X]
    h = X
    for idx, (layer, p) in enumerate(zip(net.layers, net.params)):
        if layer.kind == "dense":
            h = h @ p[0].T + p[1]
            if idx in net.unit_masks:
                h = h * net.unit_masks[idx]
        elif layer.kind == "relu":
            h = np.maximum(h, 0.0)
        else:
            h = np.tanh(h)
        acts.append(h)
    return acts


def _backward(net: Network, acts: List[np.ndarray], grad_out: np.ndarray,
              want_params: bool = False) -> Tuple[np.ndarray, List[Params]]:
    """Reverse pass; grad_out rows may outnumber the cached batch when it has one row"""
    g = grad_out
    grads: List[Params] = [None] * len(net.layers)
    for idx in reversed(range(len(net.layers))):
        layer = net.layers[idx]
        if layer.kind == "dense":
            if idx in net.unit_masks:
                g = g * net.unit_masks[idx]
            if want_params:
                grads[idx] = (g.T @ acts[idx], g.sum(axis=0))
            g = g @ net.params[idx][0]
        elif layer.kind == "relu":
            g = g * (acts[idx] > 0)
        else:
            g = g * (1.0 - acts[idx + 1] ** 2)
    return g, grads


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Pre-softmax scores; (N,) for one input, (B, N) for a batch"""
    X, single = _as_batch(net, x)
    out = _forward_cache(net, X)[-1]
    return out[0] if single else out


def layer_outputs(net: Network, x: np.ndarray) -> List[np.ndarray]:
    """Output of every layer for a batch, aligned with net.layers"""
    X, _ = _as_batch(net, x)
    return _forward_cache(net, X)[1:]


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis"""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite scores")
    return _softmax(z, axis=-1)


def predict(net: Network, X: np.ndarray) -> np.ndarray:
    """argmax labels; ties resolve to the lowest index"""
    return np.argmax(np.atleast_2d(forward(net, X)), axis=1)


def grad_input(net: Network, x: np.ndarray, component: int) -> np.ndarray:
    """d logits[component] / d x"""
    X, single = _as_batch(net, x)
    if not 0 <= component < net.n_classes:
        raise ShapeError(f"Component {component} outside 0..{net.n_classes - 1}")
    acts = _forward_cache(net, X)
    seed = np.zeros((X.shape[0], net.n_classes))
    seed[:, component] = 1.0
    g, _ = _backward(net, acts, seed)
    return g[0] if single else g


def jacobian(net: Network, x: np.ndarray) -> np.ndarray:
    """All logit input-gradients at one point, shape (N, M)"""
    X, single = _as_batch(net, x)
    if not single and X.shape[0] != 1:
        raise ShapeError("jacobian takes a single input")
    acts = _forward_cache(net, X)
    g, _ = _backward(net, acts, np.eye(net.n_classes))
    return g


def grad_loss_input(net: Network, x: np.ndarray, target: Union[int, np.ndarray]) -> np.ndarray:
    """d(-log softmax(f(x))[target]) / d x, per sample for batches"""
    X, single = _as_batch(net, x)
    targets = np.broadcast_to(np.asarray(target, dtype=int), (X.shape[0],))
    if np.any(targets < 0) or np.any(targets >= net.n_classes):
        raise ShapeError(f"Target outside 0..{net.n_classes - 1}")
    acts = _forward_cache(net, X)
    seed = softmax(acts[-1])
    seed[np.arange(X.shape[0]), targets] -= 1.0
    g, _ = _backward(net, acts, seed)
    return g[0] if single else g

# ============================================================================
# TRAINING
# ============================================================================

Augment = Callable[[Network, np.ndarray, np.ndarray, np.random.Generator], Tuple[np.ndarray, np.ndarray]]


def one_hot(ys: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(ys), n_classes))
    out[np.arange(len(ys)), ys] = 1.0
    return out


def cross_entropy(net: Network, X: np.ndarray, T: np.ndarray) -> float:
    """Mean cross-entropy of the network against target distributions"""
    return float(-(T * log_softmax(forward(net, X).reshape(len(X), -1), axis=1)).sum(axis=1).mean())


def accuracy(net: Network, data) -> float:
    if len(data.ys) == 0:
        raise InsufficientDataError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(net, data.xs) == data.ys))


def train(net: Network, data, cfg: TrainConfig, *,
          trainable: Optional[Set[int]] = None,
          soft_targets: Optional[np.ndarray] = None,
          augment: Optional[Augment] = None) -> Network:
    """Seeded minibatch SGD on cross-entropy; returns a trained copy"""
    if len(data.ys) == 0:
        raise InsufficientDataError(f"Cannot train on empty dataset '{data.name}'")
    if np.any(data.ys >= net.n_classes) or np.any(data.ys < 0):
        raise ShapeError(f"Labels of '{data.name}' exceed {net.n_classes} classes")
    if data.xs.shape[1] != net.input_dim:
        raise ShapeError(f"Dataset dimension {data.xs.shape[1]} != network input {net.input_dim}")

    model = net.copy()
    dense = model.dense_indices
    update = set(dense) if trainable is None else set(trainable)
    if not update <= set(dense):
        raise ValueError(f"Trainable layers {sorted(update)} are not all dense layers")

    targets = one_hot(data.ys, model.n_classes) if soft_targets is None else np.asarray(soft_targets, dtype=np.float64)
    if targets.shape != (len(data.ys), model.n_classes):
        raise ShapeError(f"Targets of shape {targets.shape} do not match dataset")

    rng = np.random.default_rng(cfg.seed)
    n = len(data.ys)
    last_loss = float('nan')
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            Xb, Tb = data.xs[idx], targets[idx]
            if augment is not None:
                Xa, Ta = augment(model, Xb, Tb, rng)
                Xb, Tb = np.concatenate([Xb, Xa]), np.concatenate([Tb, Ta])

            acts = _forward_cache(model, Xb)
            logp = log_softmax(acts[-1], axis=1)
            loss = float(-(Tb * logp).sum(axis=1).mean())
            if not np.isfinite(loss):
                raise DivergenceError(f"Non-finite loss at epoch {epoch}, batch {batch} "
                                      f"(last finite loss {last_loss:.6g}, lr {cfg.learning_rate})")
            last_loss = loss
            epoch_loss += loss * len(idx)

            _, grads = _backward(model, acts, (np.exp(logp) - Tb) / len(Xb), want_params=True)
            for i in update:
                W, b = model.params[i]
                gW, gb = grads[i]
                W -= cfg.learning_rate * (gW + cfg.l2_penalty * W)
                b -= cfg.learning_rate * gb
            if model.unit_masks:
                model.apply_masks()
        logger.debug("epoch %d loss %.6f", epoch, epoch_loss / n)

    acc = accuracy(model, data)
    model.meta['train_accuracy'] = acc
    model.meta['final_loss'] = last_loss
    logger.info("trained %s on '%s': accuracy %.4f after %d epochs", model.arch_id, data.name, acc, cfg.epochs)
    return model

# ============================================================================
# PERSISTENCE
# ============================================================================

def save_network(net: Network, path: Union[str, Path]) -> str:
    return dump_json(path, "network", net.to_dict())


def load_network(path: Union[str, Path]) -> Network:
    return Network.from_dict(load_json(path, "network"))

# ============================================================================
# DEMO
# ============================================================================

if __name__ == "__main__":
    print("COREFP-NN: Minimal differentiable feed-forward classifiers\n")

    net = init_network(ArchSpec("demo", (8,)), in_dim=4, n_classes=3, seed=1)
    x = np.full(4, 0.5)
    print(f"Logits:     {forward(net, x)}")
    print(f"Softmax:    {softmax(forward(net, x))}")
    print(f"dz0/dx:     {grad_input(net, x, 0)}")
    print(f"dLoss/dx:   {grad_loss_input(net, x, 2)}")
    print(f"Param hash: {net.param_hash[:16]}...")
