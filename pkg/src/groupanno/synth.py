"""Synthetic 2-D datasets with simulated, group-biased annotators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .types import AnnotationDataset, AnnotatorTable, Annotation, Instance

# Group sensitivity/specificity targets, indexed [category][group].
DEFAULT_ALPHA = ((0.700, 0.500), (0.900, 0.400))
DEFAULT_BETA = ((0.800, 0.300), (0.300, 0.500))

CIRCLE_R0 = 1.0
CIRCLE_R1 = 1.8
CIRCLE_R2 = 2.2
CIRCLE_JITTER = 0.5
MOON_JITTER = 0.1

BIAS_LO, BIAS_HI = 0.01, 0.99


@dataclass(frozen=True)
class SynthConfig:
    shape: str = "circle"
    instances_per_class: int = 400
    num_annotators: int = 40
    annotations_per_instance: int = 4
    num_categories: int = 2
    target_group_alpha: Tuple[Tuple[float, float], ...] = DEFAULT_ALPHA
    target_group_beta: Tuple[Tuple[float, float], ...] = DEFAULT_BETA
    individual_noise_sd: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.shape not in ("circle", "moon"):
            raise ValueError(f"shape must be 'circle' or 'moon', got {self.shape!r}")
        if min(self.instances_per_class, self.num_annotators, self.annotations_per_instance, self.num_categories) <= 0:
            raise ValueError("counts must be positive")
        if self.annotations_per_instance > self.num_annotators:
            raise ValueError("annotations_per_instance cannot exceed num_annotators")
        if self.individual_noise_sd < 0:
            raise ValueError("individual_noise_sd must be nonnegative")
        for name in ("target_group_alpha", "target_group_beta"):
            t = np.asarray(getattr(self, name), dtype=float)
            if t.shape != (self.num_categories, 2):
                raise ValueError(f"{name} must be {self.num_categories}x2, got shape {t.shape}")
            if np.any(t <= 0) or np.any(t >= 1):
                raise ValueError(f"{name} entries must lie strictly inside (0, 1)")

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        d = dict(d)
        for k in ("target_group_alpha", "target_group_beta"):
            if k in d:
                d[k] = tuple(tuple(float(v) for v in row) for row in d[k])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruthBundle:
    dataset: AnnotationDataset
    table: AnnotatorTable
    gold: Dict[str, int]
    true_annot_alpha: Dict[str, float]
    true_annot_beta: Dict[str, float]
    realized_group_alpha: Tuple[Tuple[float, float], ...]
    realized_group_beta: Tuple[Tuple[float, float], ...]


def _rng(config: SynthConfig, stream: int) -> np.random.Generator:
    # independent streams so changing one stage does not shift the others
    return np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, stream])


def generate_instances(config: SynthConfig) -> List[Tuple[np.ndarray, int]]:
    rng = _rng(config, 0)
    n = config.instances_per_class
    if config.shape == "circle":
        r_in = CIRCLE_R0 * np.sqrt(rng.uniform(size=n))
        r_out = np.sqrt(rng.uniform(CIRCLE_R1 ** 2, CIRCLE_R2 ** 2, size=n))
        t = rng.uniform(0, 2 * np.pi, size=(2, n))
        x0 = np.c_[r_in * np.cos(t[0]), r_in * np.sin(t[0])]
        x1 = np.c_[r_out * np.cos(t[1]), r_out * np.sin(t[1])]
        jitter = CIRCLE_JITTER
    else:
        t = rng.uniform(0, np.pi, size=(2, n))
        x0 = np.c_[np.cos(t[0]), np.sin(t[0])]
        x1 = np.c_[1 - np.cos(t[1]), 0.5 - np.sin(t[1])]
        jitter = MOON_JITTER
    X = np.vstack([x0, x1]) + rng.normal(0, jitter, size=(2 * n, 2))
    y = np.r_[np.zeros(n, dtype=int), np.ones(n, dtype=int)]
    order = rng.permutation(2 * n)
    return [(X[k], int(y[k])) for k in order]


def _additive_bias(targets, groups, noise):
    t = np.asarray(targets, dtype=float)
    u = t.mean()
    effects = t - t.mean(axis=1, keepdims=True)
    P = t.shape[0]
    val = u + effects[np.arange(P)[None, :], groups].sum(axis=1) + noise
    return np.clip(val, BIAS_LO, BIAS_HI)


def generate_annotators(config: SynthConfig):
    """Balanced group assignment per category and additive true biases.

    Returns ``(table, alpha, beta)`` where the last two map annotator id to
    the true sensitivity and specificity.
    """
    rng = _rng(config, 1)
    R, P = config.num_annotators, config.num_categories
    groups = np.zeros((R, P), dtype=np.int64)
    for p in range(P):
        groups[rng.permutation(R)[R // 2:], p] = 1
    noise_a = rng.normal(0, config.individual_noise_sd, size=R)
    noise_b = rng.normal(0, config.individual_noise_sd, size=R)
    alpha = _additive_bias(config.target_group_alpha, groups, noise_a)
    beta = _additive_bias(config.target_group_beta, groups, noise_b)
    ids = [f"a{r:03d}" for r in range(R)]
    table = AnnotatorTable(
        {a: tuple(int(g) for g in groups[r]) for r, a in enumerate(ids)}, P
    )
    return (
        table,
        {a: float(v) for a, v in zip(ids, alpha)},
        {a: float(v) for a, v in zip(ids, beta)},
    )


def realized_group_rates(dataset: AnnotationDataset, table: AnnotatorTable, gold) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical group sensitivity and specificity, as (P, 2) arrays.

    Sensitivity of group g in category p is the fraction of z=1 among the
    annotations that group members gave to gold-positive instances.
    """
    P = table.num_categories
    hits = np.zeros((2, P, 2))
    totals = np.zeros((2, P, 2))
    for inst in dataset.instances:
        y = gold[inst.instance_id]
        for a in inst.annotations:
            correct = a.label == y
            for p, g in enumerate(table.annotators[a.annotator_id]):
                totals[y, p, g] += 1
                hits[y, p, g] += correct
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = hits / totals
    return rates[1], rates[0]


def generate_annotations(instances, annotators, config: SynthConfig) -> GroundTruthBundle:
    """Assign distinct annotators to each instance and sample their labels."""
    table, alpha, beta = annotators
    rng = _rng(config, 2)
    ids = list(table.annotators)
    records = []
    gold = {}
    for k, (x, y) in enumerate(instances):
        iid = f"i{k:05d}"
        gold[iid] = int(y)
        chosen = rng.choice(len(ids), size=config.annotations_per_instance, replace=False)
        u = rng.uniform(size=len(chosen))
        anns = []
        for j, r in enumerate(chosen):
            a = ids[r]
            if y == 1:
                z = int(u[j] < alpha[a])
            else:
                z = int(u[j] >= beta[a])
            anns.append(Annotation(a, z))
        records.append(Instance(iid, tuple(float(v) for v in x), tuple(anns)))
    dataset = AnnotationDataset(tuple(records), len(instances[0][0]) if instances else 2)
    ra, rb = realized_group_rates(dataset, table, gold)
    return GroundTruthBundle(
        dataset=dataset,
        table=table,
        gold=gold,
        true_annot_alpha=alpha,
        true_annot_beta=beta,
        realized_group_alpha=tuple(tuple(float(v) for v in row) for row in ra),
        realized_group_beta=tuple(tuple(float(v) for v in row) for row in rb),
    )


def generate(config: SynthConfig = SynthConfig()) -> GroundTruthBundle:
    return generate_annotations(generate_instances(config), generate_annotators(config), config)
