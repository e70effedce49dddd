"""Reference truth-inference methods: majority vote, ZenCrowd and LFC-binary."""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, Tuple

import numpy as np

from . import em
from .classifier import sigmoid
from .types import AnnotationDataset, PosteriorLabels

Q_LO, Q_HI = 0.01, 0.99


def majority_vote(dataset: AnnotationDataset) -> PosteriorLabels:
    """Posterior = fraction of positive annotations; a 0.5 tie is labelled 1."""
    idx = dataset.index
    n = idx.num_instances
    counts = np.bincount(idx.inst, minlength=n)
    if np.any(counts == 0):
        raise ValueError("every instance needs at least one annotation")
    mu = np.bincount(idx.inst, idx.z, minlength=n) / counts
    return PosteriorLabels.from_array(idx.instance_ids, mu)


def zencrowd(
    dataset: AnnotationDataset,
    em_epochs: int = 50,
    class_prior: float = 0.5,
    init_reliability: float = 0.7,
) -> Tuple[PosteriorLabels, Dict[str, float]]:
    """EM over one reliability ``q_r`` per worker.

    Each epoch computes posteriors from the current reliabilities, then sets
    ``q_r`` to the expected fraction of correct answers, clipped to
    ``[0.01, 0.99]``. The returned posteriors come from the last E-step.
    """
    idx = dataset.index
    n, R = idx.num_instances, idx.num_annotators
    z, inst, ann = idx.z, idx.inst, idx.ann
    q = np.full(R, float(init_reliability))
    prior_logit = np.log(class_prior) - np.log1p(-class_prior)
    mu = None
    for _ in range(em_epochs):
        lq = np.log(q) - np.log1p(-q)
        # a positive vote adds +logit(q) to the log odds, a negative vote -logit(q)
        log_odds = prior_logit + np.bincount(inst, (2 * z - 1) * lq[ann], minlength=n)
        mu = sigmoid(log_odds)
        correct = mu[inst] * z + (1 - mu[inst]) * (1 - z)
        q = np.bincount(ann, correct, minlength=R) / np.bincount(ann, minlength=R)
        q = np.clip(q, Q_LO, Q_HI)
    return (
        PosteriorLabels.from_array(idx.instance_ids, mu),
        {a: float(v) for a, v in zip(idx.annotator_ids, q)},
    )


LFC_CONFIG = em.EmConfig(group_model_enabled=False, prior="flat")


def lfc_binary(dataset: AnnotationDataset, config: em.EmConfig = LFC_CONFIG) -> em.EmState:
    """Per-annotator sensitivity/specificity with a jointly trained classifier.

    Runs the GroupAnno engine with group modelling off and no prior on the
    annotator biases, i.e. maximum likelihood.
    """
    config = replace(config, group_model_enabled=False, prior="flat")
    return em.run(dataset, None, config)
