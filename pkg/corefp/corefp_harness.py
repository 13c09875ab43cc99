#!/usr/bin/env python3
"""
COREFP-HARNESS: End-to-end experiments from one YAML config
split → zoo → fingerprint → transcripts → calibration → verdicts → report

- ExperimentEngine accepts a dict, a YAML path or the built-in "demo" config
- Every stage failure is re-raised as StageError naming the stage
- All randomness derives from the root seed by stage-name hashing
- report.txt is a deterministic YAML document; wall-clock timing goes to timing.json

Usage:
    engine = ExperimentEngine("experiment.yaml", overrides={'seed': 7})
    result = engine.run()
    print(result['report']['rates'])
"""

import copy
import dataclasses
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import spearmanr

from .corefp_artifacts import ArtifactWriter, to_yaml
from .corefp_core import (CoreFPError, InsufficientDataError, SchemaError, StageError, default_out_dir,
                          derive_seed, generate_content_hash, get_timestamp, read_document)
from .corefp_data import (LabeledDataset, SplitPlan, load_cifar10_binary, load_dataset, make_synthetic,
                          save_dataset, split_225)
from .corefp_nn import load_network
from .corefp_fingerprint import CoreGenConfig, Fingerprint, generate_fingerprint, load_fingerprint
from .corefp_identify import (CLUSTER_FEATURES, ClusterModel, Method, SuspectTranscript, Thresholds, Verdict,
                              agglomerative, calibrate_thresholds, classify_suspect, decide, distance,
                              kind_group, kmeans, l1_dist, load_cluster_model, load_thresholds,
                              load_transcript, query_suspect, verdicts_csv)
from .corefp_zoo import KIND_ORDER, LogitOracle, ModelKind, Zoo, ZooConfig, build_zoo, load_zoo, save_zoo

# Optional YAML support
try:
    import yaml
    HAS_YAML = True
except ImportError:
    HAS_YAML = False
    yaml = None

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================

def _zoo_defaults() -> Dict[str, Any]:
    d = ZooConfig().to_dict()
    d.pop('seed')
    d.pop('threads')
    for section in ('train', 'finetune', 'extract'):
        d[section].pop('seed')
    return d


def _coregen_defaults() -> Dict[str, Any]:
    d = CoreGenConfig().to_dict()
    d.pop('seed')
    return d


DEFAULT_CONFIG: Dict[str, Any] = {
    'seed': 0,
    'threads': 1,
    'out_dir': None,
    'top_k': None,
    'data': {
        'source': 'synthetic',
        'n_classes': 5,
        'dim': 16,
        'n_per_class': 200,
        'spread': 0.1,
        'path': None,
        'downsample': 4,
        'limit': None,
        'overlap': 0.5,
    },
    'zoo': _zoo_defaults(),
    'coregen': _coregen_defaults(),
    'identify': {
        'methods': ['l1', 'cos', 'cluster'],
        'outputs': 'logits',
        'cluster': {'algorithm': 'kmeans', 'k': 3, 'max_iters': 100, 'n_init': 10, 'features': 'cosine'},
    },
}

DEMO_CONFIG: Dict[str, Any] = {
    'seed': 7,
    'data': {'n_classes': 4, 'dim': 8, 'n_per_class': 100},
    'zoo': {
        'counts': {'HM_SA': 2, 'HM_DA': 2, 'PM_P': 2, 'PM_FL': 2, 'PM_FA': 2, 'PM_ADV': 2,
                   'EM_SA_L': 2, 'EM_DA_L': 2, 'EM_SA_PR': 2, 'EM_DA_PR': 2},
        'train': {'epochs': 20},
        'finetune': {'epochs': 5},
        'extract': {'epochs': 40},
    },
    'coregen': {'outer_max_epochs': 600},
}


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values in `update` win"""
    merged = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != 'counts':
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    n_classes: int = 5
    dim: int = 16
    n_per_class: int = 200
    spread: float = 0.1
    path: Optional[str] = None
    downsample: Optional[int] = 4
    limit: Optional[int] = None
    overlap: float = 0.5

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar10"):
            raise ValueError(f"data.source must be 'synthetic' or 'cifar10', got '{self.source}'")
        if self.source == "cifar10" and not self.path:
            raise ValueError("data.path is required for cifar10")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError(f"data.overlap must lie in [0,1], got {self.overlap}")

    def load(self, seed: int) -> LabeledDataset:
        if self.source == "cifar10":
            return load_cifar10_binary(self.path, downsample=self.downsample, limit=self.limit)
        return make_synthetic(self.n_classes, self.dim, self.n_per_class, self.spread, seed)


@dataclass
class ExperimentConfig:
    data: DataConfig
    zoo: ZooConfig
    coregen: CoreGenConfig
    methods: List[Method]
    cluster_algorithm: str = "kmeans"
    cluster_k: int = 3
    cluster_max_iters: int = 100
    cluster_n_init: int = 10
    cluster_features: str = "cosine"
    outputs: str = "logits"
    top_k: Optional[int] = None
    seed: int = 0
    out_dir: str = field(default_factory=default_out_dir)
    threads: int = 1

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ExperimentConfig":
        """Typed config from an effective config tree; stage seeds derive from the root seed"""
        seed = int(d['seed'])
        threads = int(d.get('threads', 1))
        zoo_tree = copy.deepcopy(d['zoo'])
        for section in ('train', 'finetune', 'extract'):
            zoo_tree.setdefault(section, {}).pop('seed', None)
        zoo = dataclasses.replace(ZooConfig.from_dict(zoo_tree), seed=derive_seed(seed, "zoo"), threads=threads)
        coregen = dataclasses.replace(CoreGenConfig.from_dict({k: v for k, v in d['coregen'].items() if k != 'seed'}),
                                      seed=derive_seed(seed, "coregen"))
        ident = d['identify']
        cluster = ident.get('cluster', {})
        return cls(
            data=DataConfig(**d['data']),
            zoo=zoo,
            coregen=coregen,
            methods=[Method(m) for m in ident['methods']],
            cluster_algorithm=cluster.get('algorithm', 'kmeans'),
            cluster_k=int(cluster.get('k', 3)),
            cluster_max_iters=int(cluster.get('max_iters', 100)),
            cluster_n_init=int(cluster.get('n_init', 10)),
            cluster_features=cluster.get('features', 'cosine'),
            outputs=ident.get('outputs', 'logits'),
            top_k=None if d.get('top_k') is None else int(d['top_k']),
            seed=seed,
            out_dir=d.get('out_dir') or default_out_dir(),
            threads=threads,
        )


class ExperimentEngine:
    """Load, validate and run experiment configurations"""

    def __init__(self, config: Union[dict, str, None] = None, overrides: Optional[Dict[str, Any]] = None):
        if config is None:
            user = {}
        elif isinstance(config, str) and config == "demo":
            user = DEMO_CONFIG
        elif isinstance(config, (str, Path)):
            if not HAS_YAML:
                raise RuntimeError("YAML support requires: pip install pyyaml")
            if not Path(config).exists():
                raise FileNotFoundError(f"No such config file: {config}")
            with open(config, 'r') as f:
                user = yaml.safe_load(f) or {}
            if not isinstance(user, dict):
                raise SchemaError(f"{config}: config must be a key/value tree")
        else:
            user = config

        self.config = deep_merge(deep_merge(DEFAULT_CONFIG, user), overrides or {})
        self.config_hash = self._generate_config_hash()

    def _generate_config_hash(self) -> str:
        """Hash of the effective config; the output directory is not part of it"""
        return generate_content_hash(self.effective())

    def effective(self) -> Dict[str, Any]:
        return {k: v for k, v in self.config.items() if k != 'out_dir'}

    def validate(self) -> List[str]:
        """Validate configuration and return error messages"""
        errors = []
        known = set(DEFAULT_CONFIG)
        for key in self.config:
            if key not in known:
                errors.append(f"Unknown key '{key}'")
        for section in ('zoo', 'coregen'):
            if 'seed' in self.config.get(section, {}):
                errors.append(f"{section}.seed: stage seeds derive from the root 'seed'")
        try:
            cfg = ExperimentConfig.from_dict(self.config)
        except (KeyError, TypeError, ValueError) as e:
            errors.append(f"Invalid configuration: {e}")
            return errors
        if cfg.outputs not in ("logits", "probabilities"):
            errors.append(f"identify.outputs must be 'logits' or 'probabilities', got '{cfg.outputs}'")
        if cfg.cluster_algorithm not in ("kmeans", "agglomerative"):
            errors.append(f"identify.cluster.algorithm must be kmeans or agglomerative, got '{cfg.cluster_algorithm}'")
        if cfg.cluster_k < 1:
            errors.append(f"identify.cluster.k must be >= 1, got {cfg.cluster_k}")
        if cfg.cluster_n_init < 1:
            errors.append(f"identify.cluster.n_init must be >= 1, got {cfg.cluster_n_init}")
        if cfg.cluster_features not in CLUSTER_FEATURES:
            errors.append(f"identify.cluster.features must be one of {list(CLUSTER_FEATURES)}, got '{cfg.cluster_features}'")
        if cfg.data.source == "synthetic" and cfg.top_k is not None and not 1 <= cfg.top_k <= cfg.data.n_classes:
            errors.append(f"top_k must lie in 1..{cfg.data.n_classes}, got {cfg.top_k}")
        if not any(v for k, v in cfg.zoo.counts.items() if k.group == "HM"):
            errors.append("zoo.counts: at least one homologous model is required")
        if not any(v for k, v in cfg.zoo.counts.items() if k.is_piracy):
            errors.append("zoo.counts: at least one piracy model is required")
        return errors

    def build(self) -> ExperimentConfig:
        errors = self.validate()
        if errors:
            raise ValueError("Invalid experiment config: " + "; ".join(errors))
        return ExperimentConfig.from_dict(self.config)

    def run(self, out_dir: Optional[str] = None) -> Dict[str, Any]:
        """Run the full experiment; returns the report plus an _audit record"""
        cfg = self.build()
        if out_dir:
            cfg = dataclasses.replace(cfg, out_dir=out_dir)
        writer = ArtifactWriter(cfg.out_dir)
        writer.write_yaml("config.yaml", self.config, "config")
        report = run_experiment(cfg, writer, effective_config=self.effective(), config_hash=self.config_hash)
        report_hash = writer.artifacts()["report.txt"]
        writer.write_manifest({'config_hash': self.config_hash, 'report_hash': report_hash})
        audit = {
            'config_hash': self.config_hash,
            'report_hash': report_hash,
            'artifacts': writer.artifacts(),
            'models': 1 + len(report.calibration_ids) + len(report.evaluation_ids),
            'timestamp': get_timestamp(),
        }
        return {'report': report.to_dict(), '_audit': audit, 'out_dir': cfg.out_dir}

# ============================================================================
# REPORT
# ============================================================================

def _kind_name(kind: Any) -> str:
    return kind.value if isinstance(kind, ModelKind) else str(kind).upper()


def _truth_group(truth: Dict[str, Any], model_id: str) -> str:
    if model_id not in truth:
        raise KeyError(f"No ground truth for model '{model_id}'")
    return kind_group(truth[model_id])


def compute_mir(verdicts: Sequence[Verdict], truth: Dict[str, Any]) -> float:
    """Missed identification rate: piracy models not flagged / piracy models"""
    piracy = [v for v in verdicts if _truth_group(truth, v.model_id) in ("PM", "EM")]
    if not piracy:
        raise InsufficientDataError("MIR needs at least one true piracy model")
    return sum(1 for v in piracy if not v.is_piracy) / len(piracy)


def compute_fir(verdicts: Sequence[Verdict], truth: Dict[str, Any]) -> float:
    """False identification rate: homologous models flagged / homologous models"""
    homologous = [v for v in verdicts if _truth_group(truth, v.model_id) == "HM"]
    if not homologous:
        raise InsufficientDataError("FIR needs at least one true homologous model")
    return sum(1 for v in homologous if v.is_piracy) / len(homologous)


def kind_breakdown(verdicts: Sequence[Verdict], truth: Dict[str, Any]) -> Dict[str, float]:
    """Per kind: miss rate for piracy kinds, false-flag rate for homologous kinds"""
    out = {}
    for kind in KIND_ORDER:
        members = [v for v in verdicts if _kind_name(truth.get(v.model_id)) == kind.value]
        if not members:
            continue
        wrong = [v for v in members if v.is_piracy != kind.is_piracy]
        out[kind.value] = len(wrong) / len(members)
    return out


@dataclass
class ZooReport:
    verdicts: List[Verdict]
    rates: Dict[str, Dict[str, float]]
    breakdown: Dict[str, Dict[str, float]]
    thresholds: Thresholds
    calibration_ids: List[str]
    evaluation_ids: List[str]
    insights: Dict[str, Any]
    ablation: Dict[str, Any]
    config: Dict[str, Any]
    config_hash: str
    fingerprint: Dict[str, Any]
    timing: Dict[str, float] = field(default_factory=dict)
    zoo_checks: List[str] = field(default_factory=list)

    def verdicts_by_method(self) -> Dict[Method, List[Verdict]]:
        grouped: Dict[Method, List[Verdict]] = {}
        for v in self.verdicts:
            grouped.setdefault(v.method, []).append(v)
        return grouped

    def to_dict(self) -> Dict[str, Any]:
        """Deterministic report body; timing is excluded"""
        return {
            'config_hash': self.config_hash,
            'config': self.config,
            'split': {'calibration': self.calibration_ids, 'evaluation': self.evaluation_ids,
                      'protocol': 'stratified by kind, alternating; calibration takes the first of each pair'},
            'fingerprint': self.fingerprint,
            'thresholds': self.thresholds.to_dict(),
            'rates': self.rates,
            'breakdown': self.breakdown,
            'insights': self.insights,
            'ablation': self.ablation,
            'zoo_checks': self.zoo_checks,
        }

# ============================================================================
# STAGES
# ============================================================================

class _Timer:
    def __init__(self):
        self.timing: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        logger.info("stage %s started", name)
        try:
            yield
        except StageError:
            raise
        except (CoreFPError, ValueError, KeyError, TypeError, OSError, RuntimeError) as e:
            logger.error("stage %s failed: %s", name, e)
            raise StageError(name, e) from e
        finally:
            self.timing[name] = round(time.perf_counter() - start, 6)


def split_calibration(zoo: Zoo) -> Tuple[List[str], List[str]]:
    """Stratified halves of the suspects: per kind, members alternate calibration/evaluation"""
    calibration, evaluation = [], []
    for kind in KIND_ORDER:
        if kind is ModelKind.VICTIM:
            continue
        for i, record in enumerate(zoo.by_kind(kind)):
            (calibration if i % 2 == 0 else evaluation).append(record.model_id)
    return calibration, evaluation


def prepare_split(cfg: ExperimentConfig, writer: ArtifactWriter) -> SplitPlan:
    data = cfg.data.load(derive_seed(cfg.seed, "data"))
    split = split_225(data, cfg.data.overlap, derive_seed(cfg.seed, "split"))
    writer.record("data/victim.json", "dataset", save_dataset(split.victim, writer.path("data/victim.json")))
    return split


def train_zoo(split: SplitPlan, cfg: ExperimentConfig, writer: ArtifactWriter) -> Zoo:
    zoo = build_zoo(split, cfg.zoo)
    for path, content_hash in save_zoo(zoo, writer.path("zoo")).items():
        writer.record(Path(path).relative_to(writer.root).as_posix(), "zoo", content_hash)
    return zoo


def fingerprint_victim(zoo: Zoo, cfg: ExperimentConfig, init_pool: LabeledDataset) -> Tuple[Fingerprint, SuspectTranscript]:
    victim = zoo.victim
    fp = generate_fingerprint(victim.net, cfg.coregen, top_k=cfg.top_k, init_pool=init_pool,
                              threads=cfg.threads, victim_id=victim.model_id)
    victim_t = query_suspect(victim.oracle(), fp, cfg.outputs)
    fp.victim_outputs = victim_t.outputs
    fp.output_kind = victim_t.output_kind
    return fp, victim_t


def query_zoo(zoo: Zoo, fp: Fingerprint, outputs: str = "logits") -> Dict[str, SuspectTranscript]:
    return {r.model_id: query_suspect(r.oracle(), fp, outputs) for r in zoo.suspects()}


def fit_cluster_model(transcripts: Sequence[SuspectTranscript], kinds: Sequence[Any],
                      cfg: ExperimentConfig) -> ClusterModel:
    if cfg.cluster_algorithm == "agglomerative":
        return agglomerative(transcripts, cfg.cluster_k, kinds=kinds, features=cfg.cluster_features)
    return kmeans(transcripts, cfg.cluster_k, derive_seed(cfg.seed, "kmeans"), cfg.cluster_max_iters, kinds=kinds,
                  n_init=cfg.cluster_n_init, features=cfg.cluster_features)


def separation_margins(victim_t: SuspectTranscript, population: Sequence[Tuple[SuspectTranscript, Any]]) -> Dict[str, float]:
    th = calibrate_thresholds(victim_t, population)
    return {'l1': th.margin_l1, 'cos': th.margin_cos}


def score_gap(fp: Fingerprint, zoo: Zoo, outputs: str = "logits") -> Dict[str, float]:
    """Mean and variance of the per-point target-score difference for HM and post-processed piracy models"""
    victim_t = query_suspect(zoo.victim.oracle(), fp, outputs)
    diffs: Dict[str, List[float]] = {"HM": [], "PM": []}
    for record in zoo.suspects():
        if record.kind.group in diffs:
            t = query_suspect(record.oracle(), fp, outputs)
            diffs[record.kind.group].append(l1_dist(victim_t, t) / len(fp))
    if not diffs["HM"] or not diffs["PM"]:
        raise InsufficientDataError("Score gap needs homologous and post-processed piracy models")
    hm, pm = np.asarray(diffs["HM"]), np.asarray(diffs["PM"])
    return {'gap': float(hm.mean() - pm.mean()), 'hm_mean': float(hm.mean()), 'pm_mean': float(pm.mean()),
            'hm_var': float(hm.var()), 'pm_var': float(pm.var())}


def _spearman(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    if len(xs) < 3:
        return None
    rho, _ = spearmanr(xs, ys)
    return float(rho) if np.isfinite(rho) else None


def score_radius_correlation(fp: Fingerprint) -> Dict[int, Optional[float]]:
    """Spearman(score, radius) over each core point's checkpoints"""
    return {cp.label: _spearman([c.score for c in cp.checkpoints], [c.radius for c in cp.checkpoints])
            for cp in fp.core_points}


CORE_CURVE_COLUMNS = ("label", "epoch", "score", "confidence", "radius")
SCORE_GAP_COLUMNS = ("label", "epoch", "radius", "hm_gap", "pm_gap", "hm_var", "pm_var")


def emit_insight_curves(fp: Fingerprint, zoo: Zoo, writer: ArtifactWriter,
                        outputs: str = "logits") -> Dict[str, str]:
    """curves/core_curves.csv and curves/score_gap.csv from the checkpoint log"""
    for cp in fp.core_points:
        if not cp.checkpoints:
            raise ValueError(f"Core point for label {cp.label} has no checkpoint log")
    core_rows = [(cp.label, c.epoch, c.score, c.confidence, c.radius)
                 for cp in fp.core_points for c in cp.checkpoints]

    oracles = {"HM": [], "PM": []}
    for record in zoo.suspects():
        if record.kind.group in oracles:
            oracles[record.kind.group].append(record.oracle())
    if not oracles["HM"] or not oracles["PM"]:
        raise InsufficientDataError("Score-gap curves need homologous and post-processed piracy models")
    victim = zoo.victim.oracle()

    gap_rows = []
    for cp in fp.core_points:
        points = np.stack([c.point for c in cp.checkpoints])
        v = victim.logits(points)[:, cp.label]
        diffs = {g: np.stack([np.abs(o.logits(points)[:, cp.label] - v) for o in handles])
                 for g, handles in oracles.items()}
        mean = {g: d.mean(axis=0) for g, d in diffs.items()}
        var = {g: d.var(axis=0) for g, d in diffs.items()}
        for i, c in enumerate(cp.checkpoints):
            gap_rows.append((cp.label, c.epoch, c.radius, float(mean["HM"][i]), float(mean["PM"][i]),
                             float(var["HM"][i]), float(var["PM"][i])))

    return {
        "curves/core_curves.csv": writer.write_csv("curves/core_curves.csv", CORE_CURVE_COLUMNS, core_rows),
        "curves/score_gap.csv": writer.write_csv("curves/score_gap.csv", SCORE_GAP_COLUMNS, gap_rows),
    }


def run_experiment(cfg: ExperimentConfig, writer: Optional[ArtifactWriter] = None,
                   effective_config: Optional[Dict[str, Any]] = None,
                   config_hash: Optional[str] = None) -> ZooReport:
    """Full protocol; deterministic by cfg.seed"""
    writer = writer or ArtifactWriter(cfg.out_dir)
    timer = _Timer()

    with timer.stage("data"):
        split = prepare_split(cfg, writer)

    with timer.stage("zoo"):
        zoo = train_zoo(split, cfg, writer)

    with timer.stage("fingerprint"):
        fp, victim_t = fingerprint_victim(zoo, cfg, split.victim)
        writer.write_json("fingerprint/fingerprint.json", "fingerprint", fp.to_dict())

    with timer.stage("transcripts"):
        transcripts = query_zoo(zoo, fp, cfg.outputs)
        for model_id, t in transcripts.items():
            writer.write_json(f"transcripts/{model_id}.json", "transcript", t.to_dict())

    truth = {r.model_id: r.kind.value for r in zoo.suspects()}
    with timer.stage("calibration"):
        calibration_ids, evaluation_ids = split_calibration(zoo)
        population = [(transcripts[m], truth[m]) for m in calibration_ids]
        thresholds = calibrate_thresholds(victim_t, population)
        writer.write_json("thresholds.json", "thresholds", thresholds.to_dict())
        cluster_model = None
        if Method.CLUSTER in cfg.methods:
            cluster_model = fit_cluster_model([t for t, _ in population], [k for _, k in population], cfg)
            writer.write_json("cluster_model.json", "cluster_model", cluster_model.to_dict())

    with timer.stage("verdicts"):
        verdicts = []
        for method in cfg.methods:
            for model_id in evaluation_ids:
                if method is Method.CLUSTER:
                    verdict = classify_suspect(cluster_model, transcripts[model_id], model_id)
                else:
                    verdict = decide(victim_t, transcripts[model_id], thresholds, method)
                verdict.kind_truth = truth[model_id]
                verdicts.append(verdict)
        writer.write_text("verdicts.csv", verdicts_csv(verdicts), "verdicts")

    with timer.stage("insights"):
        insights = _insights(fp, zoo, victim_t, transcripts, truth, cfg)
        ablation = _ablation(fp, zoo, victim_t, population, cfg)
        emit_insight_curves(fp, zoo, writer, cfg.outputs)

    with timer.stage("report"):
        rates, breakdown = {}, {}
        for method in cfg.methods:
            mv = [v for v in verdicts if v.method is method]
            rates[method.value] = {'mir': compute_mir(mv, truth), 'fir': compute_fir(mv, truth)}
            breakdown[method.value] = kind_breakdown(mv, truth)
            logger.info("%s: MIR %.3f FIR %.3f", method.value, rates[method.value]['mir'], rates[method.value]['fir'])
        report = ZooReport(
            verdicts=verdicts, rates=rates, breakdown=breakdown, thresholds=thresholds,
            calibration_ids=calibration_ids, evaluation_ids=evaluation_ids,
            insights=insights, ablation=ablation,
            zoo_checks=list(zoo.checks),
            config=effective_config if effective_config is not None else {},
            config_hash=config_hash or generate_content_hash(effective_config or {}),
            fingerprint={'labels': fp.labels, 'radii': fp.radii.tolist(),
                         'epochs_used': [cp.epochs_used for cp in fp.core_points],
                         'converged': [cp.converged for cp in fp.core_points],
                         'coregen': cfg.coregen.to_dict(), 'top_k': cfg.top_k},
        )
        writer.write_yaml("report.txt", report.to_dict(), "report")

    report.timing = timer.timing
    writer.write_json("timing.json", "timing", timer.timing)
    return report


def _insights(fp: Fingerprint, zoo: Zoo, victim_t: SuspectTranscript, transcripts: Dict[str, SuspectTranscript],
              truth: Dict[str, str], cfg: ExperimentConfig) -> Dict[str, Any]:
    means = {}
    for method in (Method.L1, Method.COS):
        piracy = [distance(method, victim_t, t) for m, t in transcripts.items() if kind_group(truth[m]) in ("PM", "EM")]
        homologous = [distance(method, victim_t, t) for m, t in transcripts.items() if kind_group(truth[m]) == "HM"]
        means[method.value] = {'piracy': float(np.mean(piracy)), 'homologous': float(np.mean(homologous))}

    epochs = fp.checkpoint_epochs()
    first = next((e for e in epochs if e > 0), None)
    gaps = None
    if first is not None and any(r.kind.group == "PM" for r in zoo.suspects()):
        gaps = {'first_epoch': first, 'first': score_gap(fp.at_epoch(first), zoo, cfg.outputs),
                'last': score_gap(fp, zoo, cfg.outputs)}
    return {'score_radius_spearman': score_radius_correlation(fp), 'mean_distance': means, 'score_gap': gaps}


def _ablation(fp: Fingerprint, zoo: Zoo, victim_t: SuspectTranscript,
              population: Sequence[Tuple[SuspectTranscript, str]], cfg: ExperimentConfig) -> Dict[str, Any]:
    """Calibrated margins with converged core points vs their random initial samples"""
    initial = fp.initial()
    init_victim_t = query_suspect(zoo.victim.oracle(), initial, cfg.outputs)
    init_population = [(query_suspect(zoo.get(t.model_id).oracle(), initial, cfg.outputs), kind)
                       for t, kind in population]
    return {'core': separation_margins(victim_t, population),
            'random_initial': separation_margins(init_victim_t, init_population)}

# ============================================================================
# STAGED ENTRY POINTS
# ============================================================================

def stage_train_zoo(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Split and zoo only; persists data/victim.json and zoo/"""
    writer = ArtifactWriter(cfg.out_dir)
    timer = _Timer()
    with timer.stage("data"):
        split = prepare_split(cfg, writer)
    with timer.stage("zoo"):
        zoo = train_zoo(split, cfg, writer)
    writer.write_manifest({'stage': 'train-zoo'})
    return {'models': len(zoo), 'artifacts': writer.artifacts(), 'timing': timer.timing}


def stage_fingerprint(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Fingerprint the victim of a persisted zoo and query every suspect"""
    writer = ArtifactWriter(cfg.out_dir)
    timer = _Timer()
    with timer.stage("fingerprint"):
        zoo = load_zoo(writer.path("zoo"))
        init_pool = load_dataset(writer.path("data/victim.json"))
        fp, _ = fingerprint_victim(zoo, cfg, init_pool)
        writer.write_json("fingerprint/fingerprint.json", "fingerprint", fp.to_dict())
    with timer.stage("transcripts"):
        for model_id, t in query_zoo(zoo, fp, cfg.outputs).items():
            writer.write_json(f"transcripts/{model_id}.json", "transcript", t.to_dict())
    writer.write_manifest({'stage': 'fingerprint'})
    return {'models': len(zoo), 'artifacts': writer.artifacts(), 'timing': timer.timing}


def stage_insight_curves(cfg: ExperimentConfig) -> Dict[str, Any]:
    writer = ArtifactWriter(cfg.out_dir)
    timer = _Timer()
    with timer.stage("insights"):
        fp = load_fingerprint(writer.path("fingerprint/fingerprint.json"))
        zoo = load_zoo(writer.path("zoo"))
        written = emit_insight_curves(fp, zoo, writer, cfg.outputs)
    return {'artifacts': written, 'timing': timer.timing}


def load_suspect(path: Union[str, Path], fp: Fingerprint, outputs: str = "logits") -> SuspectTranscript:
    """Transcript from a suspect file holding either a network or a transcript"""
    document = read_document(path)
    if document['type'] == "transcript":
        return load_transcript(path)
    if document['type'] == "network":
        return query_suspect(LogitOracle(load_network(path), Path(path).stem), fp, outputs)
    raise SchemaError(f"{path}: expected a network or transcript artifact, got '{document['type']}'")


def identify_files(fingerprint_path: Union[str, Path], suspect_path: Union[str, Path], method: Method,
                   thresholds: Optional[Thresholds] = None,
                   cluster_model: Optional[Union[ClusterModel, str, Path]] = None) -> Verdict:
    """Verdict for one suspect file against a fingerprint file holding the victim's outputs"""
    fp = load_fingerprint(fingerprint_path)
    suspect_t = load_suspect(suspect_path, fp, fp.output_kind)
    if method is Method.CLUSTER:
        if cluster_model is None:
            raise ValueError("Cluster verdicts need a fitted cluster model")
        cm = cluster_model if isinstance(cluster_model, ClusterModel) else load_cluster_model(cluster_model)
        return classify_suspect(cm, suspect_t)
    if thresholds is None:
        raise ValueError(f"{method.value} verdicts need thresholds")
    if fp.victim_outputs is None:
        raise SchemaError(f"{fingerprint_path}: fingerprint carries no victim outputs")
    victim_t = SuspectTranscript(fp.victim_id, fp.labels, fp.victim_outputs, fp.output_kind)
    return decide(victim_t, suspect_t, thresholds, method)


def resolve_thresholds(path: Optional[Union[str, Path]] = None, d1: Optional[float] = None,
                       d2: Optional[float] = None) -> Thresholds:
    """Thresholds from a thresholds.json file, overridden by explicit d1/d2"""
    base = load_thresholds(path) if path else None
    d1 = d1 if d1 is not None else (base.d1 if base else None)
    d2 = d2 if d2 is not None else (base.d2 if base else None)
    if d1 is None or d2 is None:
        raise ValueError("Thresholds need a --thresholds file or both --d1 and --d2")
    return Thresholds(d1, d2)


if __name__ == "__main__":
    from .corefp_core import configure_logging, print_audit_summary
    configure_logging(1)
    result = ExperimentEngine("demo").run()
    print(to_yaml(result['report']['rates']))
    print_audit_summary(result['_audit'], "COREFP-HARNESS")
