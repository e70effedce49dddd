"""Domain types shared across the package.

All containers are frozen dataclasses. Instance and annotator identifiers are
opaque strings; dense integer indices are assigned by order of first
appearance in the dataset (see :meth:`AnnotationDataset.index`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

CLAMP_EPS = 1e-3


@dataclass(frozen=True)
class Annotation:
    annotator_id: str
    label: int


@dataclass(frozen=True)
class Instance:
    instance_id: str
    features: Tuple[float, ...]
    annotations: Tuple[Annotation, ...]


@dataclass(frozen=True)
class IndexedData:
    """Dense array view of an :class:`AnnotationDataset`.

    ``inst[k]``, ``ann[k]`` and ``z[k]`` describe the k-th annotation in
    dataset order.
    """

    instance_ids: Tuple[str, ...]
    annotator_ids: Tuple[str, ...]
    X: np.ndarray
    inst: np.ndarray
    ann: np.ndarray
    z: np.ndarray

    @property
    def num_instances(self) -> int:
        return len(self.instance_ids)

    @property
    def num_annotators(self) -> int:
        return len(self.annotator_ids)


@dataclass(frozen=True)
class AnnotationDataset:
    instances: Tuple[Instance, ...]
    feature_dim: int

    @classmethod
    def from_records(cls, records, feature_dim=None) -> "AnnotationDataset":
        """Build from ``(instance_id, features, [(annotator_id, label), ...])`` tuples."""
        instances = []
        for iid, feats, anns in records:
            instances.append(Instance(
                str(iid),
                tuple(float(v) for v in feats),
                tuple(Annotation(str(a), int(l)) for a, l in anns),
            ))
        if feature_dim is None:
            feature_dim = len(instances[0].features) if instances else 0
        return cls(tuple(instances), int(feature_dim))

    def __len__(self) -> int:
        return len(self.instances)

    @cached_property
    def index(self) -> IndexedData:
        inst_ids = []
        ann_pos: Dict[str, int] = {}
        inst_idx, ann_idx, labels = [], [], []
        for i, instance in enumerate(self.instances):
            inst_ids.append(instance.instance_id)
            for a in instance.annotations:
                if a.annotator_id not in ann_pos:
                    ann_pos[a.annotator_id] = len(ann_pos)
                inst_idx.append(i)
                ann_idx.append(ann_pos[a.annotator_id])
                labels.append(a.label)
        if self.instances:
            X = np.array([inst.features for inst in self.instances], dtype=float)
            X = X.reshape(len(self.instances), self.feature_dim)
        else:
            X = np.zeros((0, self.feature_dim))
        return IndexedData(
            instance_ids=tuple(inst_ids),
            annotator_ids=tuple(ann_pos),
            X=X,
            inst=np.array(inst_idx, dtype=np.int64),
            ann=np.array(ann_idx, dtype=np.int64),
            z=np.array(labels, dtype=float),
        )

    @property
    def instance_ids(self) -> Tuple[str, ...]:
        return self.index.instance_ids

    @property
    def annotator_ids(self) -> Tuple[str, ...]:
        return self.index.annotator_ids

    def subset(self, instance_ids) -> "AnnotationDataset":
        keep = set(instance_ids)
        return AnnotationDataset(
            tuple(inst for inst in self.instances if inst.instance_id in keep),
            self.feature_dim,
        )


@dataclass(frozen=True)
class AnnotatorTable:
    """Binary demographic group memberships, one vector of length P per annotator."""

    annotators: Mapping[str, Tuple[int, ...]]
    num_categories: int
    category_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.category_names:
            names = tuple(f"category_{p}" for p in range(self.num_categories))
            object.__setattr__(self, "category_names", names)

    @classmethod
    def from_dict(cls, groups: Mapping[str, Sequence[int]], category_names=()) -> "AnnotatorTable":
        groups = {str(k): tuple(int(g) for g in v) for k, v in groups.items()}
        P = len(next(iter(groups.values()))) if groups else len(category_names)
        return cls(groups, P, tuple(category_names))

    def __contains__(self, annotator_id) -> bool:
        return annotator_id in self.annotators

    def group_matrix(self, annotator_ids: Sequence[str]) -> np.ndarray:
        """Return an (R, P) int array of group memberships in the given order."""
        return np.array([self.annotators[a] for a in annotator_ids], dtype=np.int64).reshape(
            len(annotator_ids), self.num_categories
        )


@dataclass(frozen=True)
class GroupBiasParams:
    u_alpha: float
    u_beta: float
    group_effects_alpha: Tuple[Tuple[float, float], ...]
    group_effects_beta: Tuple[Tuple[float, float], ...]
    annot_alpha: Mapping[str, float]
    annot_beta: Mapping[str, float]
    concentration: float

    def prior_mean(self, groups: Sequence[int], which: str = "alpha", eps: float = CLAMP_EPS) -> float:
        """Clamped Beta prior mean ``u + sum_p effect[p][g_p]`` for one group vector."""
        if which == "alpha":
            u, eff = self.u_alpha, self.group_effects_alpha
        else:
            u, eff = self.u_beta, self.group_effects_beta
        m = u + sum(eff[p][g] for p, g in enumerate(groups))
        lo, hi = mean_bounds(self.concentration, eps)
        return min(max(m, lo), hi)


def mean_bounds(concentration: float, eps: float) -> Tuple[float, float]:
    """Admissible range of a Beta prior mean.

    Besides the ``eps`` margin, the mean is kept where both shape parameters
    ``s m`` and ``s (1 - m)`` are at least 1; below that the density is
    unbounded at 0 or 1 and so is the MAP objective. For ``s <= 2`` the range
    collapses to ``{0.5}``; ``s = 2`` is then the uniform prior.
    """
    lo = min(max(eps, 1.0 / concentration), 0.5)
    hi = max(min(1.0 - eps, 1.0 - 1.0 / concentration), 0.5)
    return lo, hi


@dataclass(frozen=True)
class ClassifierParams:
    weights: Tuple[float, ...]
    intercept: float = 0.0
    standardize: bool = False

    @classmethod
    def zeros(cls, dim: int) -> "ClassifierParams":
        return cls((0.0,) * dim, 0.0)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class PosteriorLabels:
    mu: Mapping[str, float]
    hard: Mapping[str, int] = field(default=None)

    def __post_init__(self):
        if self.hard is None:
            object.__setattr__(self, "hard", {k: hard_label(v) for k, v in self.mu.items()})

    @classmethod
    def from_array(cls, instance_ids: Sequence[str], mu) -> "PosteriorLabels":
        return cls({iid: float(m) for iid, m in zip(instance_ids, mu)})


def hard_label(mu: float) -> int:
    # ties at exactly 0.5 go to the positive class
    return 1 if mu >= 0.5 else 0


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


def validate_dataset(dataset: AnnotationDataset, table: AnnotatorTable) -> List[Violation]:
    """Check dataset/table invariants and return every violation found.

    An empty list means the pair is usable by every estimator in the package.
    """
    report: List[Violation] = []
    if dataset.feature_dim <= 0:
        report.append(Violation("feature_dim", f"feature_dim must be positive, got {dataset.feature_dim}"))
    seen_instances = set()
    unknown = []
    for inst in dataset.instances:
        if inst.instance_id in seen_instances:
            report.append(Violation("duplicate_instance", f"instance {inst.instance_id!r} appears twice"))
        seen_instances.add(inst.instance_id)
        if len(inst.features) != dataset.feature_dim:
            report.append(Violation(
                "dimension_mismatch",
                f"instance {inst.instance_id!r} has {len(inst.features)} features, expected {dataset.feature_dim}",
            ))
        elif not all(np.isfinite(inst.features)):
            report.append(Violation("non_finite_feature", f"instance {inst.instance_id!r} has non-finite features"))
        if not inst.annotations:
            report.append(Violation("empty_annotations", f"instance {inst.instance_id!r} has an empty annotation list"))
        seen_annotators = set()
        for a in inst.annotations:
            if a.annotator_id in seen_annotators:
                report.append(Violation(
                    "duplicate_annotation",
                    f"annotator {a.annotator_id!r} labels instance {inst.instance_id!r} more than once",
                ))
            seen_annotators.add(a.annotator_id)
            if a.label not in (0, 1):
                report.append(Violation(
                    "label_domain", f"label {a.label!r} on instance {inst.instance_id!r} is not 0/1"
                ))
            if a.annotator_id not in table and a.annotator_id not in unknown:
                unknown.append(a.annotator_id)
    for a in unknown:
        report.append(Violation("unknown_annotator", f"annotator {a!r} is missing from the annotator table"))
    for a, groups in table.annotators.items():
        if len(groups) != table.num_categories:
            report.append(Violation(
                "group_vector_length",
                f"annotator {a!r} has {len(groups)} group entries, expected {table.num_categories}",
            ))
        elif any(g not in (0, 1) for g in groups):
            report.append(Violation("group_domain", f"annotator {a!r} has a non-binary group value"))
    return report


class ValidationError(ValueError):
    """Raised when inputs break a dataset or table invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  [{v.kind}] {v.message}" for v in self.violations)
        super().__init__(f"{len(self.violations)} validation problem(s):\n{lines}")


def check(dataset: AnnotationDataset, table: AnnotatorTable) -> None:
    report = validate_dataset(dataset, table)
    if report:
        raise ValidationError(report)
