"""Accuracy and F1 of inferred labels against gold labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Sequence

from .types import PosteriorLabels


@dataclass(frozen=True)
class LabelScores:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: float
    n: int


def f1_score(tp: int, fp: int, fn: int) -> float:
    # no positives anywhere counts as perfect agreement on the positive class
    if tp + fp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def score_labels(pred: Sequence[int], gold: Sequence[int]) -> LabelScores:
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predictions vs {len(gold)} gold labels")
    if not pred:
        raise ValueError("nothing to score")
    tp = sum(1 for p, g in zip(pred, gold) if p == 1 and g == 1)
    fp = sum(1 for p, g in zip(pred, gold) if p == 1 and g == 0)
    fn = sum(1 for p, g in zip(pred, gold) if p == 0 and g == 1)
    correct = sum(1 for p, g in zip(pred, gold) if p == g)
    return LabelScores(
        accuracy=correct / len(pred),
        precision=tp / (tp + fp) if tp + fp else None,
        recall=tp / (tp + fn) if tp + fn else None,
        f1=f1_score(tp, fp, fn),
        n=len(pred),
    )


def evaluate(inferred: PosteriorLabels, gold: Mapping[str, int]) -> LabelScores:
    """Score the hard labels of ``inferred`` on every instance it covers."""
    missing = [iid for iid in inferred.hard if iid not in gold]
    if missing:
        raise ValueError(f"gold labels missing for {len(missing)} instance(s), e.g. {missing[0]!r}")
    ids = list(inferred.hard)
    return score_labels([inferred.hard[i] for i in ids], [int(gold[i]) for i in ids])


@dataclass(frozen=True)
class MethodMetrics:
    truth_accuracy: float
    truth_f1: float
    test_accuracy: Optional[float] = None
    test_f1: Optional[float] = None
    bias_mae: Optional[float] = None


@dataclass(frozen=True)
class MetricsReport:
    """Per-method metrics averaged over seeds, plus the per-seed breakdown."""

    methods: Dict[str, MethodMetrics]
    per_seed: Dict[int, Dict[str, MethodMetrics]] = field(default_factory=dict)
    name: str = ""

    def __getitem__(self, method: str) -> MethodMetrics:
        return self.methods[method]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "methods": {m: asdict(v) for m, v in self.methods.items()},
            "per_seed": {
                str(s): {m: asdict(v) for m, v in row.items()} for s, row in self.per_seed.items()
            },
        }


def average(rows: Sequence[MethodMetrics]) -> MethodMetrics:
    def mean(name):
        vals = [getattr(r, name) for r in rows]
        if any(v is None for v in vals):
            return None
        return sum(vals) / len(vals)

    return MethodMetrics(**{k: mean(k) for k in MethodMetrics.__dataclass_fields__})
