#!/usr/bin/env python3
"""
COREFP-ZOO: Victim, homologous and piracy model population
Registry of hash-audited model records built from one ZooConfig

Kinds:
- VICTIM                   the defender's model
- HM_SA / HM_DA            independently trained, same / different architecture
- PM_FL / PM_FA            fine-tuned last layer / all layers
- PM_P                     fine-pruned
- PM_ADV                   adversarially (PGD) fine-tuned
- EM_{SA,DA}_{L,PR}        extracted from label / probability queries

Usage:
    zoo = build_zoo(split, ZooConfig(seed=3))
    for record in zoo.suspects():
        print(record.model_id, record.kind.value, record.accuracy)
"""

import dataclasses
import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .corefp_core import (InsufficientDataError, SchemaError, ShapeError, derive_seed,
                          dump_json, load_json)
from .corefp_data import LabeledDataset, SplitPlan
from .corefp_nn import (ArchSpec, Network, TrainConfig, accuracy, forward, grad_loss_input,
                        init_network, layer_outputs, load_network, predict, save_network,
                        softmax, train)

logger = logging.getLogger(__name__)

# ============================================================================
# TAXONOMY
# ============================================================================

class ModelKind(Enum):
    VICTIM = "VICTIM"
    HM_SA = "HM_SA"
    HM_DA = "HM_DA"
    PM_P = "PM_P"
    PM_FL = "PM_FL"
    PM_FA = "PM_FA"
    PM_ADV = "PM_ADV"
    EM_SA_L = "EM_SA_L"
    EM_DA_L = "EM_DA_L"
    EM_SA_PR = "EM_SA_PR"
    EM_DA_PR = "EM_DA_PR"

    @property
    def group(self) -> str:
        """VICTIM, HM, PM or EM"""
        return "VICTIM" if self is ModelKind.VICTIM else self.value.split("_")[0]

    @property
    def is_piracy(self) -> bool:
        return self.group in ("PM", "EM")


KIND_ORDER = list(ModelKind)


class FineTuneMode(Enum):
    LAST_LAYER = "LAST_LAYER"
    ALL = "ALL"


class ExtractionMode(Enum):
    LABEL = "LABEL"
    PROB = "PROB"


@dataclass(frozen=True)
class PGDConfig:
    eps: float = 0.05
    step: float = 0.02
    iters: int = 5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"PGD eps must be positive, got {self.eps}")
        if self.step < 0 or self.iters < 0:
            raise ValueError("PGD step and iters must be non-negative")


@dataclass(frozen=True)
class QueryAugmentConfig:
    """Synthetic extraction queries: uniform noise plus Jacobian-sign growth rounds"""
    rounds: int = 2
    step: float = 0.1
    noise_ratio: float = 0.5

    def __post_init__(self):
        if self.rounds < 0 or self.noise_ratio < 0:
            raise ValueError("Query augmentation rounds and noise_ratio must be non-negative")
        if self.rounds and not self.step > 0:
            raise ValueError(f"Query augmentation step must be positive, got {self.step}")

# ============================================================================
# QUERY-ONLY HANDLES
# ============================================================================

class LabelOracle:
    """Black-box handle answering argmax labels only"""

    def __init__(self, query: Callable[[np.ndarray], np.ndarray], dimension: int, n_classes: int):
        self._query = query
        self.dimension = dimension
        self.n_classes = n_classes

    def labels(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise ShapeError(f"Query of dimension {X.shape[1]} rejected; oracle expects {self.dimension}")
        return np.asarray(self._query(X), dtype=np.int64)


class LogitOracle:
    """Black-box handle answering full score vectors"""

    def __init__(self, net: Network, model_id: str = "model"):
        self._net = net
        self.model_id = model_id
        self.dimension = net.input_dim
        self.n_classes = net.n_classes

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise ShapeError(f"Query of dimension {X.shape[1]} rejected; oracle expects {self.dimension}")
        return forward(self._net, X)

    def labels(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def label_only(self) -> LabelOracle:
        net = self._net
        return LabelOracle(lambda X: predict(net, X), self.dimension, self.n_classes)

# ============================================================================
# RECORDS & CONFIG
# ============================================================================

@dataclass
class ModelRecord:
    model_id: str
    net: Network
    kind: ModelKind
    lineage: Optional[str]
    seed: int
    accuracy: float
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind.group in ("VICTIM", "HM") and self.lineage is not None:
            raise ValueError(f"{self.model_id}: {self.kind.value} models have no lineage")
        if self.kind.is_piracy and not self.lineage:
            raise ValueError(f"{self.model_id}: {self.kind.value} models must reference the victim")

    def oracle(self) -> LogitOracle:
        return LogitOracle(self.net, self.model_id)

    def manifest_entry(self) -> Dict[str, Any]:
        return {'model_id': self.model_id, 'kind': self.kind.value, 'lineage': self.lineage,
                'seed': self.seed, 'accuracy': self.accuracy, 'arch_id': self.net.arch_id,
                'param_hash': self.net.param_hash, 'meta': self.meta}


DEFAULT_COUNTS = {
    ModelKind.HM_SA: 6, ModelKind.HM_DA: 6,
    ModelKind.PM_P: 4, ModelKind.PM_FL: 4, ModelKind.PM_FA: 4, ModelKind.PM_ADV: 4,
    ModelKind.EM_SA_L: 4, ModelKind.EM_DA_L: 4, ModelKind.EM_SA_PR: 4, ModelKind.EM_DA_PR: 4,
}


@dataclass
class ZooConfig:
    counts: Dict[ModelKind, int] = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    victim_arch: ArchSpec = ArchSpec("mlp-relu-64x32", (64, 32), "relu")
    alt_arch: ArchSpec = ArchSpec("mlp-tanh-48", (48,), "tanh")
    train: TrainConfig = TrainConfig(epochs=40, learning_rate=0.1, batch_size=32)
    finetune: TrainConfig = TrainConfig(epochs=10, learning_rate=0.05, batch_size=32)
    extract: TrainConfig = TrainConfig(epochs=80, learning_rate=0.1, batch_size=32)
    prune_fraction: float = 0.5
    prune_layer: int = -1
    pgd: PGDConfig = PGDConfig()
    queries: QueryAugmentConfig = QueryAugmentConfig()
    hm_overlaps: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0])
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.counts = {ModelKind(k) if not isinstance(k, ModelKind) else k: int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("Zoo counts must be non-negative")
        if self.counts.get(ModelKind.VICTIM, 1) != 1:
            raise ValueError("A zoo holds exactly one victim")
        if not self.hm_overlaps:
            raise ValueError("hm_overlaps must list at least one overlap ratio")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'counts': {k.value: v for k, v in self.counts.items()},
            'victim_arch': self.victim_arch.to_dict(), 'alt_arch': self.alt_arch.to_dict(),
            'train': self.train.to_dict(), 'finetune': self.finetune.to_dict(), 'extract': self.extract.to_dict(),
            'prune_fraction': self.prune_fraction, 'prune_layer': self.prune_layer,
            'pgd': dataclasses.asdict(self.pgd), 'queries': dataclasses.asdict(self.queries),
            'hm_overlaps': list(self.hm_overlaps),
            'seed': self.seed, 'threads': self.threads,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ZooConfig":
        defaults = cls()
        return cls(
            counts={ModelKind(k): v for k, v in d.get('counts', {k.value: v for k, v in defaults.counts.items()}).items()},
            victim_arch=ArchSpec.from_dict(d['victim_arch']) if 'victim_arch' in d else defaults.victim_arch,
            alt_arch=ArchSpec.from_dict(d['alt_arch']) if 'alt_arch' in d else defaults.alt_arch,
            train=TrainConfig.from_dict(d['train']) if 'train' in d else defaults.train,
            finetune=TrainConfig.from_dict(d['finetune']) if 'finetune' in d else defaults.finetune,
            extract=TrainConfig.from_dict(d['extract']) if 'extract' in d else defaults.extract,
            prune_fraction=float(d.get('prune_fraction', defaults.prune_fraction)),
            prune_layer=int(d.get('prune_layer', defaults.prune_layer)),
            pgd=PGDConfig(**d['pgd']) if 'pgd' in d else defaults.pgd,
            queries=QueryAugmentConfig(**d['queries']) if 'queries' in d else defaults.queries,
            hm_overlaps=[float(o) for o in d.get('hm_overlaps', defaults.hm_overlaps)],
            seed=int(d.get('seed', defaults.seed)),
            threads=int(d.get('threads', defaults.threads)),
        )

# ============================================================================
# MODEL BUILDERS
# ============================================================================

def train_victim(split: SplitPlan, arch: ArchSpec, cfg: TrainConfig) -> ModelRecord:
    """VICTIM trained from scratch on X_v"""
    data = split.victim
    if len(data) == 0:
        raise InsufficientDataError("Victim split is empty")
    net = init_network(arch, data.dim, data.n_classes, seed=cfg.seed)
    net = train(net, data, cfg)
    return ModelRecord("victim", net, ModelKind.VICTIM, None, cfg.seed, net.meta['train_accuracy'])


def train_homologous(split: SplitPlan, arch: ArchSpec, victim_arch_id: str, overlap: float,
                     cfg: TrainConfig, index: int = 0) -> ModelRecord:
    """Independent model from fresh init on X_h with the requested overlap"""
    data = split.with_overlap(overlap).homologous if overlap != split.overlap else split.homologous
    kind = ModelKind.HM_SA if arch.arch_id == victim_arch_id else ModelKind.HM_DA
    net = init_network(arch, data.dim, data.n_classes, seed=cfg.seed)
    net = train(net, data, cfg)
    return ModelRecord(f"{kind.value.lower()}-{index:02d}", net, kind, None, cfg.seed,
                       net.meta['train_accuracy'], {'overlap': overlap})


def _require_victim(victim: ModelRecord):
    if victim.kind is not ModelKind.VICTIM:
        raise ValueError(f"Post-processing attacks start from the victim, got {victim.kind.value}")


def fine_tune(victim: ModelRecord, attack_data: LabeledDataset, mode: FineTuneMode,
              cfg: Optional[TrainConfig], index: int = 0) -> ModelRecord:
    """Copy of the victim fine-tuned on attack data; cfg None means zero epochs"""
    _require_victim(victim)
    kind = ModelKind.PM_FL if mode is FineTuneMode.LAST_LAYER else ModelKind.PM_FA
    if cfg is None:
        net = victim.net.copy()
        seed = victim.seed
    else:
        trainable = {victim.net.dense_indices[-1]} if mode is FineTuneMode.LAST_LAYER else None
        net = train(victim.net, attack_data, cfg, trainable=trainable)
        seed = cfg.seed
    return ModelRecord(f"{kind.value.lower()}-{index:02d}", net, kind, victim.model_id, seed,
                       accuracy(net, attack_data), {'mode': mode.value})


def fine_prune(victim: ModelRecord, attack_data: LabeledDataset, prune_fraction: float,
               cfg: TrainConfig, layer: int = -1, index: int = 0) -> ModelRecord:
    """Mask the least active hidden units, then fine-tune every layer with the mask held"""
    _require_victim(victim)
    if not 0.0 < prune_fraction < 1.0:
        raise ValueError(f"prune_fraction must lie in (0,1), got {prune_fraction}")
    hidden = victim.net.dense_indices[:-1]
    if not hidden:
        raise ValueError("Fine-pruning needs at least one hidden layer")
    target = hidden[layer]
    width = victim.net.layers[target].out_dim

    net = victim.net.copy()
    mean_act = layer_outputs(net, attack_data.xs)[target + 1].mean(axis=0)
    keep = net.unit_masks.get(target, np.ones(width, dtype=bool)).copy()
    n_prune = max(1, int(round(prune_fraction * width)))
    if n_prune >= int(keep.sum()):
        raise ValueError(f"Pruning {n_prune} of {int(keep.sum())} live units would remove them all")
    candidates = [u for u in np.argsort(mean_act, kind="stable") if keep[u]]
    keep[candidates[:n_prune]] = False
    net.unit_masks[target] = keep
    net.apply_masks()

    net = train(net, attack_data, cfg)
    logger.info("fine-pruned layer %d: %d/%d units masked", target, n_prune, width)
    return ModelRecord(f"pm_p-{index:02d}", net, ModelKind.PM_P, victim.model_id, cfg.seed,
                       accuracy(net, attack_data),
                       {'prune_fraction': prune_fraction, 'layer': target, 'pruned_units': n_prune})


def pgd_attack(net: Network, X: np.ndarray, y: np.ndarray, pgd: PGDConfig) -> np.ndarray:
    """L-inf PGD on the cross-entropy, projected to the eps-ball and [0,1]^M"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    X_adv = X.copy()
    for _ in range(pgd.iters):
        g = np.atleast_2d(grad_loss_input(net, X_adv, np.asarray(y)))
        X_adv = X_adv + pgd.step * np.sign(g)
        X_adv = np.clip(np.clip(X_adv, X - pgd.eps, X + pgd.eps), 0.0, 1.0)
    return X_adv


def robust_accuracy(net: Network, data: LabeledDataset, pgd: PGDConfig) -> float:
    X_adv = pgd_attack(net, data.xs, data.ys, pgd)
    return float(np.mean(predict(net, X_adv) == data.ys))


def adversarial_train(victim: ModelRecord, attack_data: LabeledDataset, pgd: PGDConfig,
                      cfg: TrainConfig, index: int = 0) -> ModelRecord:
    """Victim copy fine-tuned on batches augmented with PGD points against the current model"""
    _require_victim(victim)

    def augment(model, Xb, Tb, rng):
        return pgd_attack(model, Xb, np.argmax(Tb, axis=1), pgd), Tb

    net = train(victim.net, attack_data, cfg, augment=augment if pgd.iters > 0 else None)
    return ModelRecord(f"pm_adv-{index:02d}", net, ModelKind.PM_ADV, victim.model_id, cfg.seed,
                       accuracy(net, attack_data), {'pgd': dataclasses.asdict(pgd)})


def agreement(victim_api: Union[LabelOracle, LogitOracle], net: Network, data: LabeledDataset) -> float:
    """Fraction of inputs where the surrogate's argmax matches the victim's"""
    return float(np.mean(predict(net, data.xs) == victim_api.labels(data.xs)))


def _answer(victim_api: Union[LabelOracle, LogitOracle], xs: np.ndarray, mode: ExtractionMode,
            attack_data: LabeledDataset) -> Tuple[LabeledDataset, Optional[np.ndarray]]:
    if mode is ExtractionMode.PROB:
        soft = softmax(victim_api.logits(xs))
        labels = np.argmax(soft, axis=1)
    else:
        soft = None
        labels = victim_api.labels(xs)
    return LabeledDataset(xs, labels, f"{attack_data.name}/queried", attack_data.n_classes), soft


def jacobian_queries(net: Network, queried: LabeledDataset, step: float) -> np.ndarray:
    """x - step * sign(dL/dx) toward the victim's answer y for every query, kept inside [0,1]^M"""
    direction = -np.sign(grad_loss_input(net, queried.xs, queried.ys))
    return np.clip(queried.xs + step * direction, 0.0, 1.0)


def extract(victim_api: Union[LabelOracle, LogitOracle], attack_data: LabeledDataset,
            surrogate_arch: ArchSpec, victim_arch_id: str, mode: ExtractionMode,
            cfg: TrainConfig, index: int = 0, lineage: str = "victim",
            queries: Optional[QueryAugmentConfig] = None) -> ModelRecord:
    """Fresh surrogate trained on the victim's answers to attack data and synthesized queries

    Uniform noise queries are drawn once; each augmentation round then trains the
    surrogate, steps every query along the sign of the surrogate's input gradient for
    the victim's answer and asks the victim about the new points.
    """
    if mode is ExtractionMode.PROB and not isinstance(victim_api, LogitOracle):
        raise TypeError("Probability-based extraction needs a handle that exposes scores")
    queries = queries or QueryAugmentConfig(rounds=0, noise_ratio=0.0)
    rng = np.random.default_rng(cfg.seed)

    xs = attack_data.xs
    n_noise = int(round(queries.noise_ratio * len(attack_data)))
    if n_noise:
        xs = np.concatenate([xs, rng.uniform(0.0, 1.0, (n_noise, attack_data.dim))])

    net = init_network(surrogate_arch, attack_data.dim, attack_data.n_classes, seed=cfg.seed)
    for rnd in range(queries.rounds + 1):
        queried, soft = _answer(victim_api, xs, mode, attack_data)
        net = train(net, queried, dataclasses.replace(cfg, seed=derive_seed(cfg.seed, "extract", rnd)),
                    soft_targets=soft)
        if rnd < queries.rounds:
            xs = np.concatenate([xs, jacobian_queries(net, queried, queries.step)])

    arch = "SA" if surrogate_arch.arch_id == victim_arch_id else "DA"
    kind = ModelKind(f"EM_{arch}_{'L' if mode is ExtractionMode.LABEL else 'PR'}")
    fidelity = agreement(victim_api, net, attack_data)
    return ModelRecord(f"{kind.value.lower()}-{index:02d}", net, kind, lineage, cfg.seed, fidelity,
                       {'mode': mode.value, 'attack_queries': len(attack_data), 'queries': len(queried),
                        'augment_rounds': queries.rounds})

# ============================================================================
# ZOO REGISTRY
# ============================================================================

class Zoo:
    """Ordered, hash-audited registry of model records"""

    def __init__(self, records: List[ModelRecord], config: Optional[ZooConfig] = None):
        self._records: "OrderedDict[str, ModelRecord]" = OrderedDict()
        for record in records:
            if record.model_id in self._records:
                raise ValueError(f"Duplicate model id: {record.model_id}")
            self._records[record.model_id] = record
        victims = [r for r in records if r.kind is ModelKind.VICTIM]
        if len(victims) != 1:
            raise ValueError(f"A zoo holds exactly one victim, found {len(victims)}")
        for r in records:
            if r.lineage is not None and r.lineage not in self._records:
                raise ValueError(f"{r.model_id}: lineage '{r.lineage}' is not in the zoo")
        self.config = config
        self.checks: List[str] = []

    @property
    def victim(self) -> ModelRecord:
        return next(r for r in self._records.values() if r.kind is ModelKind.VICTIM)

    def get(self, model_id: str) -> ModelRecord:
        if model_id not in self._records:
            raise KeyError(f"Model '{model_id}' not found in zoo")
        return self._records[model_id]

    def exists(self, model_id: str) -> bool:
        return model_id in self._records

    def list_models(self) -> List[str]:
        return list(self._records.keys())

    def records(self) -> List[ModelRecord]:
        return list(self._records.values())

    def suspects(self) -> List[ModelRecord]:
        return [r for r in self._records.values() if r.kind is not ModelKind.VICTIM]

    def by_kind(self, kind: ModelKind) -> List[ModelRecord]:
        return [r for r in self._records.values() if r.kind is kind]

    def param_hashes(self) -> Dict[str, str]:
        return {mid: r.net.param_hash for mid, r in self._records.items()}

    def __len__(self) -> int:
        return len(self._records)


MIN_ACCURACY = 0.85
MIN_HOMOLOGOUS_ACCURACY = 0.9
MIN_AGREEMENT = 0.9
FINE_TUNE_SLACK = 0.05
PRUNE_SLACK = 0.1


def zoo_checks(zoo: "Zoo", attack_data: LabeledDataset, pgd: PGDConfig) -> List[str]:
    """Quality floors every member should clear; one message per miss"""
    problems = []
    victim = zoo.victim
    victim_attack_acc = accuracy(victim.net, attack_data)
    victim_robust = None
    for r in zoo.records():
        if r.accuracy < MIN_ACCURACY:
            problems.append(f"{r.model_id}: accuracy {r.accuracy:.3f} below {MIN_ACCURACY}")
        if r.kind.group == "HM" and r.accuracy < MIN_HOMOLOGOUS_ACCURACY:
            problems.append(f"{r.model_id}: homologous training accuracy {r.accuracy:.3f} below {MIN_HOMOLOGOUS_ACCURACY}")
        elif r.kind.group == "EM" and r.accuracy < MIN_AGREEMENT:
            problems.append(f"{r.model_id}: agreement with the victim {r.accuracy:.3f} below {MIN_AGREEMENT}")
        elif r.kind in (ModelKind.PM_FL, ModelKind.PM_FA) and r.accuracy < victim_attack_acc - FINE_TUNE_SLACK:
            problems.append(f"{r.model_id}: attack-data accuracy {r.accuracy:.3f} fell more than "
                            f"{FINE_TUNE_SLACK} below the victim's {victim_attack_acc:.3f}")
        elif r.kind is ModelKind.PM_P and abs(r.accuracy - victim_attack_acc) > PRUNE_SLACK:
            problems.append(f"{r.model_id}: attack-data accuracy {r.accuracy:.3f} is more than "
                            f"{PRUNE_SLACK} away from the victim's {victim_attack_acc:.3f}")
        elif r.kind is ModelKind.PM_ADV and pgd.iters > 0:
            if victim_robust is None:
                victim_robust = robust_accuracy(victim.net, attack_data, pgd)
            robust = robust_accuracy(r.net, attack_data, pgd)
            if robust <= victim_robust:
                problems.append(f"{r.model_id}: robust accuracy {robust:.3f} does not exceed the victim's {victim_robust:.3f}")
    for message in problems:
        logger.warning("zoo check: %s", message)
    return problems


def _build_member(kind: ModelKind, index: int, victim: ModelRecord, split: SplitPlan,
                  cfg: ZooConfig) -> ModelRecord:
    seed = derive_seed(cfg.seed, "zoo", kind.value, index)
    attack = split.attacker
    if kind.group == "HM":
        arch = cfg.victim_arch if kind is ModelKind.HM_SA else cfg.alt_arch
        overlap = cfg.hm_overlaps[index % len(cfg.hm_overlaps)]
        return train_homologous(split, arch, cfg.victim_arch.arch_id, overlap,
                                dataclasses.replace(cfg.train, seed=seed), index)
    if kind is ModelKind.PM_FL:
        return fine_tune(victim, attack, FineTuneMode.LAST_LAYER, dataclasses.replace(cfg.finetune, seed=seed), index)
    if kind is ModelKind.PM_FA:
        return fine_tune(victim, attack, FineTuneMode.ALL, dataclasses.replace(cfg.finetune, seed=seed), index)
    if kind is ModelKind.PM_P:
        return fine_prune(victim, attack, cfg.prune_fraction, dataclasses.replace(cfg.finetune, seed=seed),
                          cfg.prune_layer, index)
    if kind is ModelKind.PM_ADV:
        return adversarial_train(victim, attack, cfg.pgd, dataclasses.replace(cfg.finetune, seed=seed), index)
    arch = cfg.victim_arch if "_SA_" in kind.value else cfg.alt_arch
    mode = ExtractionMode.LABEL if kind.value.endswith("_L") else ExtractionMode.PROB
    api = victim.oracle() if mode is ExtractionMode.PROB else victim.oracle().label_only()
    return extract(api, attack, arch, cfg.victim_arch.arch_id, mode,
                   dataclasses.replace(cfg.extract, seed=seed), index, victim.model_id, cfg.queries)


def build_zoo(split: SplitPlan, cfg: ZooConfig) -> Zoo:
    """Victim first, then every configured member in (kind, index) order"""
    victim = train_victim(split, cfg.victim_arch, dataclasses.replace(cfg.train, seed=derive_seed(cfg.seed, "zoo", "VICTIM", 0)))
    tasks = [(kind, i) for kind in KIND_ORDER if kind is not ModelKind.VICTIM
             for i in range(cfg.counts.get(kind, 0))]

    def run(task):
        return _build_member(task[0], task[1], victim, split, cfg)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            members = list(pool.map(run, tasks))
    else:
        members = [run(t) for t in tasks]

    for m in members:
        logger.info("zoo member %-10s %-9s accuracy %.3f", m.model_id, m.kind.value, m.accuracy)
    zoo = Zoo([victim] + members, cfg)
    zoo.checks = zoo_checks(zoo, split.attacker, cfg.pgd)
    return zoo

# ============================================================================
# PERSISTENCE
# ============================================================================

def save_zoo(zoo: Zoo, directory: Union[str, Path]) -> Dict[str, str]:
    """One network file per record plus manifest.json; returns path -> hash"""
    directory = Path(directory)
    written = {}
    entries = []
    for record in zoo.records():
        rel = f"{record.model_id}.json"
        written[str(directory / rel)] = save_network(record.net, directory / rel)
        entries.append({**record.manifest_entry(), 'path': rel})
    body = {'models': entries, 'config': zoo.config.to_dict() if zoo.config else None}
    written[str(directory / "manifest.json")] = dump_json(directory / "manifest.json", "zoo-manifest", body)
    return written


def load_zoo(directory: Union[str, Path]) -> Zoo:
    directory = Path(directory)
    body = load_json(directory / "manifest.json", "zoo-manifest")
    records = []
    for entry in body['models']:
        net = load_network(directory / entry['path'])
        if net.param_hash != entry['param_hash']:
            raise SchemaError(f"{entry['path']}: parameters do not match manifest hash")
        records.append(ModelRecord(entry['model_id'], net, ModelKind(entry['kind']), entry['lineage'],
                                   int(entry['seed']), float(entry['accuracy']), entry.get('meta', {})))
    config = ZooConfig.from_dict(body['config']) if body.get('config') else None
    return Zoo(records, config)
