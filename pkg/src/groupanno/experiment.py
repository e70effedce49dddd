"""Config-driven comparison of truth-inference methods.

A config is a JSON object. Either ``synthetic`` (SynthConfig fields) or
``data`` (paths to annotations/annotators/gold CSVs, relative to the config
file) must be present. See ``configs/`` for complete examples.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import baselines, em, ingest
from .classifier import FeatureTransform, TrainConfig, fit, predict_proba
from .metrics import MethodMetrics, MetricsReport, average, evaluate, score_labels
from .synth import SynthConfig, generate, realized_group_rates
from .types import AnnotationDataset, AnnotatorTable, Instance, check

logger = logging.getLogger(__name__)

METHODS = ("mv", "zencrowd", "lfc", "groupanno")

_KNOWN_KEYS = {
    "name", "synthetic", "data", "seeds", "seed", "methods", "features",
    "test_fraction", "em", "classifier", "zencrowd",
}


class ExperimentError(RuntimeError):
    """A stage of an experiment failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def canonicalize(dataset: AnnotationDataset) -> AnnotationDataset:
    """Sort instances by id and annotations by annotator id.

    Results then do not depend on the row order of the input files.
    """
    return AnnotationDataset(
        tuple(
            Instance(inst.instance_id, inst.features, tuple(sorted(inst.annotations, key=lambda a: a.annotator_id)))
            for inst in sorted(dataset.instances, key=lambda i: i.instance_id)
        ),
        dataset.feature_dim,
    )


def split_ids(instance_ids: Sequence[str], test_fraction: float, seed: int) -> Tuple[List[str], List[str]]:
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    ids = sorted(instance_ids)
    order = np.random.default_rng([seed, 3]).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = sorted(ids[k] for k in order[:n_test])
    train = sorted(ids[k] for k in order[n_test:])
    return train, test


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    synthetic: Optional[SynthConfig]
    data: Optional[Dict[str, str]]
    seeds: Tuple[int, ...]
    methods: Tuple[str, ...]
    transform: FeatureTransform
    test_fraction: float
    em: em.EmConfig
    train: TrainConfig
    zencrowd: Dict[str, float]

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path = Path(".")) -> "ExperimentConfig":
        unknown = set(d) - _KNOWN_KEYS
        if unknown:
            raise ValueError(f"unknown config key(s) {sorted(unknown)}")
        if ("synthetic" in d) == ("data" in d):
            raise ValueError("config needs exactly one of 'synthetic' or 'data'")
        methods = tuple(d.get("methods", METHODS))
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; expected a subset of {METHODS}")
        seeds = d.get("seeds", [d.get("seed", 0)])
        data = None
        if "data" in d:
            data = {k: str((base_dir / v).resolve()) for k, v in d["data"].items()}
            for k in ("annotations", "annotators"):
                if k not in data:
                    raise ValueError(f"data section needs an {k!r} path")
        feats = d.get("features", {})
        return cls(
            name=str(d.get("name", "")),
            synthetic=SynthConfig.from_dict(d["synthetic"]) if "synthetic" in d else None,
            data=data,
            seeds=tuple(int(s) for s in seeds),
            methods=methods,
            transform=FeatureTransform(feats.get("map", "raw"), bool(feats.get("standardize", False))),
            test_fraction=float(d.get("test_fraction", 0.2)),
            em=em.EmConfig(**d.get("em", {})),
            train=TrainConfig(**d.get("classifier", {})),
            zencrowd=dict(d.get("zencrowd", {})),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ExperimentError:
                raise
            except Exception as exc:
                raise ExperimentError(name, exc) from exc
        return inner
    return wrap


@_stage("data")
def _load(cfg: ExperimentConfig, seed: int):
    if cfg.synthetic is not None:
        bundle = generate(replace(cfg.synthetic, seed=seed))
        return canonicalize(bundle.dataset), bundle.table, bundle.gold, True
    dataset = ingest.read_annotations(cfg.data["annotations"], cfg.data.get("instances"))
    table = ingest.read_annotators(cfg.data["annotators"])
    gold = ingest.read_gold(cfg.data["gold"]) if "gold" in cfg.data else None
    check(dataset, table)
    return canonicalize(dataset), table, gold, False


def _group_bias_mae(state: em.EmState, table: AnnotatorTable, dataset, gold) -> float:
    rep = em.report_group_bias(state, table)
    ra, rb = realized_group_rates(dataset, table, gold)
    est = np.array([rep["alpha"], rep["beta"]], dtype=float)
    real = np.array([ra, rb])
    ok = np.isfinite(est) & np.isfinite(real)
    return float(np.mean(np.abs(est[ok] - real[ok])))


def _infer(method: str, dataset: AnnotationDataset, table: AnnotatorTable, cfg: ExperimentConfig):
    """Return ``(posteriors, classifier or None, em state or None)``."""
    if method == "mv":
        return baselines.majority_vote(dataset), None, None
    if method == "zencrowd":
        post, _ = baselines.zencrowd(dataset, **cfg.zencrowd)
        return post, None, None
    if method == "lfc":
        state = baselines.lfc_binary(dataset, cfg.em)
        return state.posteriors, state.classifier, state
    state = em.run(dataset, table, cfg.em)
    return state.posteriors, state.classifier, state


def _run_seed(cfg: ExperimentConfig, seed: int) -> Dict[str, MethodMetrics]:
    dataset, table, gold, synthetic = _load(cfg, seed)
    train_ids, test_ids = split_ids(dataset.instance_ids, cfg.test_fraction, seed)
    transform = _stage("features")(lambda: cfg.transform.fit(dataset.subset(train_ids).index.X))()
    full = transform.apply(dataset)
    train = full.subset(train_ids)
    test = full.subset(test_ids)
    rows = {}
    for method in cfg.methods:
        run = _stage(method)
        post, _, state = run(_infer)(method, full, table, cfg)
        truth = evaluate(post, gold) if gold is not None else None
        bias_mae = None
        if synthetic and state is not None:
            bias_mae = _group_bias_mae(state, table, full, gold)
        test_acc = test_f1 = None
        if gold is not None and test_ids:
            post_tr, clf, _ = run(_infer)(method, train, table, cfg)
            if clf is None:
                hard = [post_tr.hard[i] for i in train.instance_ids]
                clf = run(fit)(train.index.X, hard, cfg.train)
            pred = (predict_proba(clf, test.index.X) >= 0.5).astype(int).tolist()
            s = score_labels(pred, [gold[i] for i in test.instance_ids])
            test_acc, test_f1 = s.accuracy, s.f1
        rows[method] = MethodMetrics(
            truth_accuracy=truth.accuracy if truth else None,
            truth_f1=truth.f1 if truth else None,
            test_accuracy=test_acc,
            test_f1=test_f1,
            bias_mae=bias_mae,
        )
        logger.info("seed %d %s: %s", seed, method, rows[method])
    return rows


def run_experiment(config, out_dir=None) -> MetricsReport:
    """Run every method on every seed and optionally write ``report.json``/``report.txt``.

    ``config`` is a path to a JSON file, a mapping, or an ExperimentConfig.
    """
    if isinstance(config, ExperimentConfig):
        cfg = config
    elif isinstance(config, Mapping):
        cfg = ExperimentConfig.from_dict(config)
    else:
        cfg = ExperimentConfig.load(config)
    per_seed = {seed: _run_seed(cfg, seed) for seed in cfg.seeds}
    means = {m: average([per_seed[s][m] for s in cfg.seeds]) for m in cfg.methods}
    report = MetricsReport(means, per_seed, cfg.name)
    if out_dir is not None:
        d = report.to_dict()
        ingest.write_report(d, Path(out_dir) / "report.json", ingest.format_table(d["methods"]))
    return report
