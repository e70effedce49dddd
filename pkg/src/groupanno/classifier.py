"""Logistic regression trained by full-batch gradient ascent."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .types import ClassifierParams

logger = logging.getLogger(__name__)

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.l2 < 0:
            raise ValueError(f"invalid TrainConfig: {self}")


class TrainingError(RuntimeError):
    pass


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=float)))


def predict_proba(params: ClassifierParams, features) -> np.ndarray:
    """P(y=1 | x) for a single vector or an (N, d) matrix, clipped away from 0 and 1."""
    X = np.asarray(features, dtype=float)
    w = params.w
    if X.shape[-1] != w.shape[0]:
        raise ValueError(f"feature length {X.shape[-1]} does not match {w.shape[0]} weights")
    p = sigmoid(X @ w + params.intercept)
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def weighted_nll_grad(params: ClassifierParams, X, mu, l2: float = 0.0):
    """Soft-label log-likelihood and its gradient.

    Returns ``(objective, grad_w, grad_intercept)`` where the objective is
    ``sum_i mu_i log p_i + (1 - mu_i) log(1 - p_i) - l2/2 |w|^2``. Despite the
    name this is the quantity to *maximise*.
    """
    X = np.asarray(X, dtype=float)
    mu = np.asarray(mu, dtype=float)
    p = predict_proba(params, X)
    w = params.w
    obj = float(np.sum(mu * np.log(p) + (1.0 - mu) * np.log1p(-p)) - 0.5 * l2 * (w @ w))
    r = mu - p
    return obj, X.T @ r - l2 * w, float(np.sum(r))


def fit(X, soft_labels, config: TrainConfig = TrainConfig(), init: ClassifierParams = None) -> ClassifierParams:
    """Fit weights to (possibly soft) labels.

    The step uses the per-instance mean gradient so the learning rate does not
    depend on the number of instances.
    """
    X = np.asarray(X, dtype=float)
    mu = np.asarray(soft_labels, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot fit a classifier on zero instances")
    params = init if init is not None else ClassifierParams.zeros(X.shape[1])
    first = None
    for epoch in range(config.epochs):
        obj, gw, gb = weighted_nll_grad(params, X, mu, config.l2)
        if not np.isfinite(obj) or not np.all(np.isfinite(gw)):
            raise TrainingError(f"non-finite objective at epoch {epoch}: obj={obj}, weights={params.weights}")
        if first is None:
            first = obj
        step = config.learning_rate / n
        params = ClassifierParams(
            tuple(params.w + step * gw), params.intercept + step * gb, params.standardize
        )
    final, _, _ = weighted_nll_grad(params, X, mu, config.l2)
    logger.debug("classifier fit: objective %.6g -> %.6g", first, final)
    return params


FEATURE_MAPS = ("raw", "quadratic")


def quadratic_features(X) -> np.ndarray:
    """Append squares and pairwise products: ``[x, x_j x_k for j <= k]``."""
    X = np.asarray(X, dtype=float)
    j, k = np.triu_indices(X.shape[1])
    return np.hstack([X, X[:, j] * X[:, k]])


@dataclass(frozen=True)
class FeatureTransform:
    """Feature map followed by optional z-scoring with frozen statistics."""

    kind: str = "raw"
    standardize: bool = False
    mean: tuple = ()
    scale: tuple = ()

    def __post_init__(self):
        if self.kind not in FEATURE_MAPS:
            raise ValueError(f"unknown feature map {self.kind!r}; expected one of {FEATURE_MAPS}")

    @property
    def is_identity(self) -> bool:
        return self.kind == "raw" and not self.standardize

    def _map(self, X):
        X = np.asarray(X, dtype=float)
        return quadratic_features(X) if self.kind == "quadratic" else X

    def fit(self, X) -> "FeatureTransform":
        if not self.standardize:
            return self
        Z = self._map(X)
        sd = Z.std(axis=0)
        sd[sd == 0] = 1.0
        return FeatureTransform(self.kind, True, tuple(Z.mean(axis=0).tolist()), tuple(sd.tolist()))

    def __call__(self, X) -> np.ndarray:
        Z = self._map(X)
        if self.standardize:
            if not self.mean:
                raise ValueError("standardizing transform has not been fitted")
            Z = (Z - np.asarray(self.mean)) / np.asarray(self.scale)
        return Z

    def apply(self, dataset):
        """Return ``dataset`` with transformed feature vectors."""
        from .types import AnnotationDataset, Instance

        if self.is_identity:
            return dataset
        Z = self(dataset.index.X)
        return AnnotationDataset(
            tuple(Instance(inst.instance_id, tuple(float(v) for v in row), inst.annotations)
                  for inst, row in zip(dataset.instances, Z)),
            Z.shape[1],
        )


def accuracy(params: ClassifierParams, X, y) -> float:
    pred = (predict_proba(params, X) >= 0.5).astype(int)
    return float(np.mean(pred == np.asarray(y)))
