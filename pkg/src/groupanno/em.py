"""Joint MAP estimation of group annotator bias, true labels and a classifier.

The model: a logistic classifier gives ``p_i = P(y_i = 1 | x_i)``; annotator
``r`` reports ``z = 1`` with probability ``alpha_r`` when ``y = 1`` and
``z = 0`` with probability ``beta_r`` when ``y = 0``. Each ``alpha_r``
(likewise ``beta_r``) carries a Beta prior with concentration ``s`` whose mean
is the additive group decomposition

    m_r = clamp(u + sum_p effect[p, g_r^p], lo, hi)

with ``[lo, hi]`` from :func:`groupanno.types.mean_bounds`.

EM alternates the Bayes posterior over ``y_i`` with gradient-ascent updates of
all parameters on the expected complete-data log likelihood plus log prior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import betaln, digamma, polygamma

from .classifier import PROB_CLIP, sigmoid
from .types import (
    AnnotationDataset,
    AnnotatorTable,
    ClassifierParams,
    GroupBiasParams,
    Instance,
    PosteriorLabels,
    check,
    mean_bounds,
)

logger = logging.getLogger(__name__)

MU_CLIP = 1e-12
_DAMPING = 1e-8


@dataclass(frozen=True)
class EmConfig:
    epochs: int = 100
    m_steps_per_epoch: int = 1
    learning_rate: float = 1.0
    concentration: float = 10.0
    clamp_eps: float = 1e-3
    l2_classifier: float = 1e-4
    group_model_enabled: bool = True
    # "beta": Beta prior around the (group) mean; "flat": no prior on annotator biases
    prior: str = "beta"
    init_bias: float = 0.7
    tol: Optional[float] = None
    # per-block overrides of learning_rate
    lr_classifier: Optional[float] = None
    lr_annotator: Optional[float] = None
    lr_group: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.m_steps_per_epoch <= 0:
            raise ValueError("epochs and m_steps_per_epoch must be positive")
        if self.learning_rate <= 0 or self.concentration <= 0:
            raise ValueError("learning_rate and concentration must be positive")
        if not 0 < self.clamp_eps < 0.1:
            raise ValueError("clamp_eps must lie in (0, 0.1)")
        if self.prior not in ("beta", "flat"):
            raise ValueError(f"unknown prior {self.prior!r}")
        if not 0 < self.init_bias < 1:
            raise ValueError("init_bias must lie in (0, 1)")


@dataclass(frozen=True)
class EmState:
    classifier: ClassifierParams
    bias: GroupBiasParams
    posteriors: PosteriorLabels
    objective_trace: Tuple[float, ...] = ()
    config: EmConfig = field(default_factory=EmConfig)
    table: Optional[AnnotatorTable] = None


class EmError(RuntimeError):
    pass


def _softplus(t):
    return np.logaddexp(0.0, t)


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


class EmProblem:
    """Arrays and parameter layout for one dataset/table pair.

    The parameter vector ``theta`` is laid out as
    ``[w (d), b, logit alpha (R), logit beta (R), u_alpha, u_beta,
    effects_alpha (P*2), effects_beta (P*2)]``.
    """

    def __init__(self, dataset: AnnotationDataset, table: Optional[AnnotatorTable], config: EmConfig):
        idx = dataset.index
        self.dataset = dataset
        self.table = table
        self.config = config
        self.instance_ids = idx.instance_ids
        self.annotator_ids = idx.annotator_ids
        self.X = idx.X
        self.inst = idx.inst
        self.ann = idx.ann
        self.z = idx.z
        self.N, self.d = self.X.shape
        self.R = idx.num_annotators
        if table is not None:
            self.P = table.num_categories
            self.G = table.group_matrix(self.annotator_ids)
        else:
            self.P = 0
            self.G = np.zeros((self.R, 0), dtype=np.int64)
        if self.N and np.any(np.bincount(self.inst, minlength=self.N) == 0):
            raise EmError("every instance needs at least one annotation")

        d, R, P = self.d, self.R, self.P
        o = 0
        self.s_w = slice(o, o + d); o += d
        self.i_b = o; o += 1
        self.s_ea = slice(o, o + R); o += R
        self.s_eb = slice(o, o + R); o += R
        self.i_ua = o; o += 1
        self.i_ub = o; o += 1
        self.s_pa = slice(o, o + 2 * P); o += 2 * P
        self.s_pb = slice(o, o + 2 * P); o += 2 * P
        self.size = o

        # (R, 2P) indicator: column 2p+g is 1 when annotator is in group g of category p
        self.M = np.zeros((R, 2 * P))
        for p in range(P):
            self.M[np.arange(R), 2 * p + self.G[:, p]] = 1.0
        self.n_per_annotator = np.bincount(self.ann, minlength=R).astype(float)
        # Gershgorin row sums of X'X/4 (with intercept column): the classifier
        # block's Hessian is dominated by this diagonal for every w
        Xb = np.hstack([self.X, np.ones((self.N, 1))])
        self._clf_bound = 0.25 * np.abs(Xb.T @ Xb).sum(axis=1)

    # -- packing ---------------------------------------------------------

    def initial_theta(self) -> np.ndarray:
        theta = np.zeros(self.size)
        c = self.config.init_bias
        theta[self.s_ea] = _logit(c)
        theta[self.s_eb] = _logit(c)
        theta[self.i_ua] = c
        theta[self.i_ub] = c
        return theta

    def pack(self, state: EmState) -> np.ndarray:
        theta = np.zeros(self.size)
        theta[self.s_w] = state.classifier.w
        theta[self.i_b] = state.classifier.intercept
        bias = state.bias
        theta[self.s_ea] = _logit([bias.annot_alpha[a] for a in self.annotator_ids])
        theta[self.s_eb] = _logit([bias.annot_beta[a] for a in self.annotator_ids])
        theta[self.i_ua] = bias.u_alpha
        theta[self.i_ub] = bias.u_beta
        if self.P:
            theta[self.s_pa] = np.asarray(bias.group_effects_alpha, dtype=float).ravel()
            theta[self.s_pb] = np.asarray(bias.group_effects_beta, dtype=float).ravel()
        return theta

    def mu_array(self, posteriors: PosteriorLabels) -> np.ndarray:
        return np.array([posteriors.mu[i] for i in self.instance_ids], dtype=float)

    def make_state(self, theta, mu, trace=()) -> EmState:
        alpha = sigmoid(theta[self.s_ea])
        beta = sigmoid(theta[self.s_eb])
        eff_a = theta[self.s_pa].reshape(self.P, 2)
        eff_b = theta[self.s_pb].reshape(self.P, 2)
        bias = GroupBiasParams(
            u_alpha=float(theta[self.i_ua]),
            u_beta=float(theta[self.i_ub]),
            group_effects_alpha=tuple(tuple(float(v) for v in row) for row in eff_a),
            group_effects_beta=tuple(tuple(float(v) for v in row) for row in eff_b),
            annot_alpha={a: float(v) for a, v in zip(self.annotator_ids, alpha)},
            annot_beta={a: float(v) for a, v in zip(self.annotator_ids, beta)},
            concentration=self.config.concentration,
        )
        clf = ClassifierParams(tuple(float(v) for v in theta[self.s_w]), float(theta[self.i_b]))
        return EmState(
            classifier=clf,
            bias=bias,
            posteriors=PosteriorLabels.from_array(self.instance_ids, mu),
            objective_trace=tuple(float(v) for v in trace),
            config=self.config,
            table=self.table,
        )

    # -- model pieces ----------------------------------------------------

    def log_factors(self, theta):
        """Per-instance ``(p, log a, log b)``."""
        p = np.clip(sigmoid(self.X @ theta[self.s_w] + theta[self.i_b]), PROB_CLIP, 1.0 - PROB_CLIP)
        ea, eb = theta[self.s_ea], theta[self.s_eb]
        log_a_r, log_1ma_r = -_softplus(-ea), -_softplus(ea)
        log_b_r, log_1mb_r = -_softplus(-eb), -_softplus(eb)
        z, ann = self.z, self.ann
        log_a = np.bincount(self.inst, z * log_a_r[ann] + (1 - z) * log_1ma_r[ann], minlength=self.N)
        log_b = np.bincount(self.inst, z * log_1mb_r[ann] + (1 - z) * log_b_r[ann], minlength=self.N)
        return p, log_a, log_b

    def posterior(self, theta) -> np.ndarray:
        p, log_a, log_b = self.log_factors(theta)
        log_odds = (log_a + np.log(p)) - (log_b + np.log1p(-p))
        return np.clip(sigmoid(log_odds), MU_CLIP, 1.0 - MU_CLIP)

    def prior_means(self, theta):
        """Unclamped prior means for alpha and beta, shape (R,) each."""
        ma = np.full(self.R, theta[self.i_ua])
        mb = np.full(self.R, theta[self.i_ub])
        if self.config.group_model_enabled and self.P:
            ma = ma + self.M @ theta[self.s_pa]
            mb = mb + self.M @ theta[self.s_pb]
        return ma, mb

    def _prior_block(self, eta, m_raw):
        """Log Beta prior of sigmoid(eta) and its derivatives wrt eta and the mean."""
        s = self.config.concentration
        lo, hi = mean_bounds(s, self.config.clamp_eps)
        active = (m_raw > lo) & (m_raw < hi)
        m = np.clip(m_raw, lo, hi)
        A, B = s * m, s * (1 - m)
        log_x, log_1mx = -_softplus(-eta), -_softplus(eta)
        x = sigmoid(eta)
        value = np.sum((A - 1) * log_x + (B - 1) * log_1mx - betaln(A, B))
        d_eta = (A - 1) * (1 - x) - (B - 1) * x
        d_m = np.where(active, s * (log_x - log_1mx - digamma(A) + digamma(B)), 0.0)
        curv_m = np.where(active, s * s * (polygamma(1, A) + polygamma(1, B)), 0.0)
        return value, d_eta, d_m, curv_m

    def objective_and_grad(self, theta, mu, with_curvature=False):
        """MAP objective (expected complete log likelihood + log prior) and gradient.

        With ``with_curvature`` a third array holds a positive diagonal curvature
        estimate used to scale M-step updates.
        """
        cfg = self.config
        w = theta[self.s_w]
        ea, eb = theta[self.s_ea], theta[self.s_eb]
        p, log_a, log_b = self.log_factors(theta)
        value = np.sum(mu * (np.log(p) + log_a) + (1 - mu) * (np.log1p(-p) + log_b))
        value -= 0.5 * cfg.l2_classifier * (w @ w)

        grad = np.zeros(self.size)
        resid = mu - p
        grad[self.s_w] = self.X.T @ resid - cfg.l2_classifier * w
        grad[self.i_b] = np.sum(resid)

        alpha, beta = sigmoid(ea), sigmoid(eb)
        mu_k = mu[self.inst]
        z, ann = self.z, self.ann
        grad[self.s_ea] = np.bincount(ann, mu_k * (z - alpha[ann]), minlength=self.R)
        grad[self.s_eb] = np.bincount(ann, (1 - mu_k) * ((1 - z) - beta[ann]), minlength=self.R)

        curv = None
        if with_curvature:
            curv = np.zeros(self.size)
            # upper bounds on the negative Hessian, using p(1-p) <= 1/4
            curv[self.s_w] = self._clf_bound[:-1] + cfg.l2_classifier
            curv[self.i_b] = self._clf_bound[-1]
            curv[self.s_ea] = 0.25 * np.bincount(ann, mu_k, minlength=self.R)
            curv[self.s_eb] = 0.25 * np.bincount(ann, 1 - mu_k, minlength=self.R)

        if cfg.prior == "beta":
            ma, mb = self.prior_means(theta)
            va, dea, dma, cma = self._prior_block(ea, ma)
            vb, deb, dmb, cmb = self._prior_block(eb, mb)
            value += va + vb
            grad[self.s_ea] += dea
            grad[self.s_eb] += deb
            grad[self.i_ua] = np.sum(dma)
            grad[self.i_ub] = np.sum(dmb)
            grouped = cfg.group_model_enabled and self.P
            if grouped:
                grad[self.s_pa] = self.M.T @ dma
                grad[self.s_pb] = self.M.T @ dmb
            if with_curvature:
                shrink = max(cfg.concentration - 2.0, 0.0)
                curv[self.s_ea] += 0.25 * shrink
                curv[self.s_eb] += 0.25 * shrink
                # each prior mean depends on u and on one effect per category
                k = 1.0 + (self.P if grouped else 0)
                curv[self.i_ua] = k * np.sum(cma)
                curv[self.i_ub] = k * np.sum(cmb)
                if grouped:
                    curv[self.s_pa] = k * (self.M.T @ cma)
                    curv[self.s_pb] = k * (self.M.T @ cmb)
        return float(value), grad, curv

    def objective(self, theta, mu) -> float:
        return self.objective_and_grad(theta, mu)[0]

    def step_sizes(self) -> np.ndarray:
        cfg = self.config
        lr = np.full(self.size, cfg.learning_rate)
        if cfg.lr_classifier is not None:
            lr[self.s_w] = cfg.lr_classifier
            lr[self.i_b] = cfg.lr_classifier
        if cfg.lr_annotator is not None:
            lr[self.s_ea] = cfg.lr_annotator
            lr[self.s_eb] = cfg.lr_annotator
        if cfg.lr_group is not None:
            lr[[self.i_ua, self.i_ub]] = cfg.lr_group
            lr[self.s_pa] = cfg.lr_group
            lr[self.s_pb] = cfg.lr_group
        return lr

    def ascent_step(self, theta, mu, lr=None) -> np.ndarray:
        """One preconditioned gradient-ascent update of every parameter block."""
        if lr is None:
            lr = self.step_sizes()
        value, grad, curv = self.objective_and_grad(theta, mu, with_curvature=True)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            state = self.make_state(theta, mu)
            raise EmError(f"non-finite M-step gradient (objective={value}); parameters: {state.bias}")
        theta = theta + lr * grad / (curv + _DAMPING)
        return self._recenter(theta)

    def _recenter(self, theta):
        # move the per-category mean of the effects into u; prior means are unchanged
        if not self.P:
            return theta
        for sl, iu in ((self.s_pa, self.i_ua), (self.s_pb, self.i_ub)):
            eff = theta[sl].reshape(self.P, 2)
            c = eff.mean(axis=1)
            theta[sl] = (eff - c[:, None]).ravel()
            theta[iu] += c.sum()
        return theta


def _problem(dataset, table, config) -> EmProblem:
    return EmProblem(dataset, table, config)


def init_state(dataset: AnnotationDataset, table: AnnotatorTable, config: EmConfig = EmConfig()) -> EmState:
    """Majority-vote posteriors, all annotator biases at ``init_bias``, zero effects and weights."""
    prob = _problem(dataset, table, config)
    mu = np.bincount(prob.inst, prob.z, minlength=prob.N) / np.bincount(prob.inst, minlength=prob.N)
    return prob.make_state(prob.initial_theta(), mu)


def likelihood_terms(state: EmState, instance: Instance) -> Tuple[float, float, float]:
    """Return ``(p_i, a_i, b_i)`` for one instance.

    ``a_i`` and ``b_i`` are the probabilities of the instance's annotations
    under ``y = 1`` and ``y = 0``; they are accumulated in log space.
    """
    if not instance.annotations:
        raise ValueError(f"instance {instance.instance_id!r} has no annotations")
    from .classifier import predict_proba

    p = float(predict_proba(state.classifier, instance.features))
    log_a = log_b = 0.0
    for ann in instance.annotations:
        al = state.bias.annot_alpha[ann.annotator_id]
        be = state.bias.annot_beta[ann.annotator_id]
        if ann.label == 1:
            log_a += np.log(al)
            log_b += np.log1p(-be)
        else:
            log_a += np.log1p(-al)
            log_b += np.log(be)
    return p, float(np.exp(log_a)), float(np.exp(log_b))


def posterior_from_terms(p: float, a: float, b: float) -> float:
    """Bayes posterior ``a p / (a p + b (1 - p))`` clipped to ``[1e-12, 1 - 1e-12]``."""
    num = a * p
    den = num + b * (1 - p)
    if den == 0:
        raise ValueError("annotations have zero probability under both labels")
    return float(np.clip(num / den, MU_CLIP, 1 - MU_CLIP))


def e_step(state: EmState, dataset: AnnotationDataset) -> PosteriorLabels:
    prob = _problem(dataset, state.table, state.config)
    mu = prob.posterior(prob.pack(state))
    return PosteriorLabels.from_array(prob.instance_ids, mu)


def map_objective(state: EmState, dataset: AnnotationDataset) -> float:
    """Expected complete-data log likelihood under ``state.posteriors`` plus log prior."""
    prob = _problem(dataset, state.table, state.config)
    value = prob.objective(prob.pack(state), prob.mu_array(state.posteriors))
    if not np.isfinite(value):
        raise EmError(f"non-finite MAP objective for state {state.bias}")
    return value


def m_step(state: EmState, dataset: AnnotationDataset, config: Optional[EmConfig] = None) -> EmState:
    config = config or state.config
    prob = _problem(dataset, state.table, config)
    theta = prob.pack(state)
    mu = prob.mu_array(state.posteriors)
    lr = prob.step_sizes()
    for _ in range(config.m_steps_per_epoch):
        theta = prob.ascent_step(theta, mu, lr)
    return prob.make_state(theta, mu, state.objective_trace)


def run(dataset: AnnotationDataset, table: Optional[AnnotatorTable], config: EmConfig = EmConfig()) -> EmState:
    """Initialise from majority vote, then alternate E- and M-steps for ``config.epochs``."""
    if table is not None:
        check(dataset, table)
    elif config.group_model_enabled and config.prior == "beta":
        raise ValueError("group modelling needs an annotator table")
    prob = _problem(dataset, table, config)
    theta = prob.initial_theta()
    lr = prob.step_sizes()
    mu = None
    trace: List[float] = []
    for epoch in range(config.epochs):
        mu = prob.posterior(theta)
        for _ in range(config.m_steps_per_epoch):
            theta = prob.ascent_step(theta, mu, lr)
        value = prob.objective(theta, mu)
        if not np.isfinite(value):
            raise EmError(f"non-finite objective at epoch {epoch}")
        trace.append(value)
        if config.tol is not None and epoch > 0:
            if abs(trace[-1] - trace[-2]) <= config.tol * max(abs(trace[-2]), 1.0):
                logger.info("converged after %d epochs", epoch + 1)
                break
    return prob.make_state(theta, mu, trace)


def report_group_bias(state: EmState, table: Optional[AnnotatorTable] = None) -> Dict[str, list]:
    """Group sensitivity/specificity as the mean fitted bias of each group's annotators.

    Returns ``{"alpha": [[a00, a01], ...], "beta": [...], "counts": [...]}``
    indexed by category then group; empty groups are ``None``.
    """
    table = table or state.table
    out = {"alpha": [], "beta": [], "counts": []}
    ids = list(state.bias.annot_alpha)
    for p in range(table.num_categories):
        ra, rb, rc = [], [], []
        for g in (0, 1):
            members = [a for a in ids if table.annotators[a][p] == g]
            rc.append(len(members))
            if members:
                ra.append(float(np.mean([state.bias.annot_alpha[a] for a in members])))
                rb.append(float(np.mean([state.bias.annot_beta[a] for a in members])))
            else:
                ra.append(None)
                rb.append(None)
        out["alpha"].append(ra)
        out["beta"].append(rb)
        out["counts"].append(rc)
    return out


def individual_offsets(state: EmState, table: Optional[AnnotatorTable] = None) -> Dict[str, Tuple[float, float]]:
    """Per-annotator deviation of the fitted bias from its group prior mean."""
    table = table or state.table
    eps = state.config.clamp_eps
    out = {}
    for a, al in state.bias.annot_alpha.items():
        g = table.annotators[a]
        out[a] = (
            al - state.bias.prior_mean(g, "alpha", eps),
            state.bias.annot_beta[a] - state.bias.prior_mean(g, "beta", eps),
        )
    return out
