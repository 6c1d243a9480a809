"""Beta mixture over ID/OOD scores: density, method of moments, batch IMM.

Two Beta components (ID, OOD) with fixed mixing proportion ``pi`` model
the marginal score distribution. Fitting alternates an E-step (posterior
ID weights) with a weighted method-of-moments step; the streaming
variant does one such iteration per training batch and EMA-smooths the
parameters. A full-dataset iterated fit serves as the reference
estimator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

log = logging.getLogger(__name__)

SCORE_CLAMP = 1e-6       # scores pushed inside (SCORE_CLAMP, 1 - SCORE_CLAMP)
PARAM_FLOOR = 1e-2       # smallest admissible Beta parameter
PARAM_CEIL = 1e6         # cap for degenerate near-zero-variance fits
MIN_COMPONENT_MASS = 1e-6


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and
                np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError(f"Beta parameters must be positive finite, "
                             f"got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        t = self.alpha + self.beta
        return self.alpha * self.beta / (t ** 2 * (t + 1.0))


@dataclass
class MomentPair:
    mean: float
    variance: float


@dataclass
class BetaMixtureModel:
    id: BetaParams
    ood: BetaParams
    pi: float                 # proportion of ID data
    epsilon: float = 0.0      # posterior regularizer, mask sampling only
    lambda_ema: float = 0.999

    def __post_init__(self):
        if not (0.0 < self.pi < 1.0):
            raise ValueError("pi must be strictly inside (0, 1)")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")

    @classmethod
    def default_init(cls, pi: float, epsilon: float = 0.0,
                     lambda_ema: float = 0.999) -> "BetaMixtureModel":
        # ID component starts near 1, OOD near 0
        return cls(id=BetaParams(10.0, 2.0), ood=BetaParams(2.0, 10.0),
                   pi=pi, epsilon=epsilon, lambda_ema=lambda_ema)

    def copy(self) -> "BetaMixtureModel":
        return BetaMixtureModel(id=self.id, ood=self.ood, pi=self.pi,
                                epsilon=self.epsilon, lambda_ema=self.lambda_ema)


def clamp_scores(s: np.ndarray) -> np.ndarray:
    return np.clip(s, SCORE_CLAMP, 1.0 - SCORE_CLAMP)


def beta_pdf(p: BetaParams, s) -> np.ndarray | float:
    """Beta density at s in (0, 1), via log-gamma for stability."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0.0) or np.any(s_arr >= 1.0):
        raise ValueError("beta_pdf requires scores strictly inside (0, 1); clamp first")
    logpdf = ((p.alpha - 1.0) * np.log(s_arr) + (p.beta - 1.0) * np.log1p(-s_arr)
              - betaln(p.alpha, p.beta))
    out = np.exp(logpdf)
    return float(out) if np.isscalar(s) else out


def weighted_moments(scores: np.ndarray, weights: np.ndarray) -> MomentPair:
    """Weighted sample mean and (population-style) weighted variance."""
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if scores.shape != weights.shape:
        raise ValueError("scores and weights must have the same length")
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("component empty this batch (zero total weight)")
    mean = float((weights * scores).sum() / total)
    var = float((weights * (scores - mean) ** 2).sum() / total)
    return MomentPair(mean=mean, variance=var)


def method_of_moments(m: MomentPair) -> BetaParams:
    """Beta parameters matching the given mean and variance.

    Over-dispersed moments (variance >= mean(1-mean)) and near-zero
    variances are clamped into [PARAM_FLOOR, PARAM_CEIL] preserving the
    mean ratio alpha/(alpha+beta).
    """
    mu, var = m.mean, m.variance
    if not (0.0 < mu < 1.0):
        raise ValueError("moment mean must be strictly inside (0, 1)")
    k = mu * (1.0 - mu) / var - 1.0 if var > 0.0 else np.inf
    if k <= 0.0:
        total = PARAM_FLOOR / min(mu, 1.0 - mu)
        log.debug("method_of_moments: over-dispersed moments clamped "
                  "(mean=%.4g var=%.4g)", mu, var)
        return BetaParams(mu * total, (1.0 - mu) * total)
    if not np.isfinite(k):
        # zero-variance batch: pin at the ceiling, preserving the mean
        log.debug("method_of_moments: zero-variance fit capped (mean=%.4g)", mu)
        total = PARAM_CEIL / max(mu, 1.0 - mu)
        return BetaParams(mu * total, (1.0 - mu) * total)
    alpha, beta = mu * k, (1.0 - mu) * k
    hi = max(alpha, beta)
    if hi > PARAM_CEIL:
        scale = PARAM_CEIL / hi
        log.debug("method_of_moments: degenerate low-variance fit capped")
        alpha, beta = alpha * scale, beta * scale
    return BetaParams(alpha, beta)


def posterior_id(model: BetaMixtureModel, s, regularized: bool = False) -> np.ndarray | float:
    """Posterior probability of being ID given a score.

    The regularized form adds ``epsilon`` to the denominator; it is used
    only when sampling masks, never inside the IMM estimation. If both
    densities underflow to zero, the prior ``pi`` is returned.
    """
    s_arr = np.asarray(s, dtype=float)
    num = model.pi * beta_pdf(model.id, s_arr)
    den = num + (1.0 - model.pi) * beta_pdf(model.ood, s_arr)
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    if regularized:
        den = den + model.epsilon
    out = np.empty_like(den)
    dead = den == 0.0
    if dead.any():
        log.warning("posterior_id: both densities underflowed for %d score(s); "
                    "returning the prior", int(dead.sum()))
        out[dead] = model.pi
    ok = ~dead
    out[ok] = num[ok] / den[ok]
    return float(out) if np.isscalar(s) else out


def _imm_iteration(model: BetaMixtureModel, unlabeled_scores: np.ndarray,
                   labeled_scores: np.ndarray) -> tuple[BetaParams | None, BetaParams | None]:
    """One E-step + MM-step; returns tilde parameters (None = skip).

    ID moments pool labeled scores at weight 1 with unlabeled scores at
    their posterior ID weight; OOD moments use unlabeled scores only.
    A component whose unlabeled mass is below MIN_COMPONENT_MASS is
    skipped this iteration.
    """
    s = np.asarray(unlabeled_scores, dtype=float)
    sl = np.asarray(labeled_scores, dtype=float)
    w_id = np.asarray(posterior_id(model, s, regularized=False), dtype=float)
    w_ood = 1.0 - w_id

    tilde_id = tilde_ood = None
    if w_id.sum() >= MIN_COMPONENT_MASS:
        pooled = np.concatenate([sl, s])
        pooled_w = np.concatenate([np.ones_like(sl), w_id])
        tilde_id = method_of_moments(weighted_moments(pooled, pooled_w))
    if w_ood.sum() >= MIN_COMPONENT_MASS:
        tilde_ood = method_of_moments(weighted_moments(s, w_ood))
    return tilde_id, tilde_ood


def _ema(old: BetaParams, new: BetaParams, lam: float) -> BetaParams:
    return BetaParams(lam * old.alpha + (1.0 - lam) * new.alpha,
                      lam * old.beta + (1.0 - lam) * new.beta)


def imm_batch_step(model: BetaMixtureModel, unlabeled_scores: np.ndarray,
                   labeled_scores: np.ndarray) -> BetaMixtureModel:
    """One streaming IMM update; returns a new model (EMA-smoothed)."""
    tilde_id, tilde_ood = _imm_iteration(model, unlabeled_scores, labeled_scores)
    lam = model.lambda_ema
    new = model.copy()
    if tilde_id is not None:
        new.id = _ema(model.id, tilde_id, lam)
    if tilde_ood is not None:
        new.ood = _ema(model.ood, tilde_ood, lam)
    return new


def fit_reference(scores: np.ndarray, labeled_scores: np.ndarray, pi: float,
                  max_iters: int = 500, tol: float = 1e-8,
                  init: BetaMixtureModel | None = None) -> BetaMixtureModel:
    """Full-dataset iterated method of moments, used as the oracle fit.

    Iterates E-step + MM-step on the whole score list until the largest
    parameter change falls below ``tol`` or ``max_iters`` is hit (the
    best iterate is returned either way, with a warning on
    non-convergence).
    """
    scores = clamp_scores(np.asarray(scores, dtype=float))
    labeled_scores = clamp_scores(np.asarray(labeled_scores, dtype=float))
    if scores.size + labeled_scores.size < 10:
        raise ValueError("need at least 10 scores to fit")
    model = (init or BetaMixtureModel.default_init(pi)).copy()
    model.pi = pi
    for _ in range(max_iters):
        tilde_id, tilde_ood = _imm_iteration(model, scores, labeled_scores)
        new = model.copy()
        if tilde_id is not None:
            new.id = tilde_id
        if tilde_ood is not None:
            new.ood = tilde_ood
        delta = max(abs(new.id.alpha - model.id.alpha), abs(new.id.beta - model.id.beta),
                    abs(new.ood.alpha - model.ood.alpha), abs(new.ood.beta - model.ood.beta))
        model = new
        if delta < tol:
            return model
    log.warning("fit_reference: no convergence after %d iterations", max_iters)
    return model
