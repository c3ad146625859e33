"""Test-mixture proportion estimation under an unseen outlier component.

The test feature density is modeled as sum_k pi_k * f_k + eps * e with the
outlier density e unobserved in training. Per-class log-odds functions
(class-l vs test) are fitted on one fold; on the held-out fold, high
density regions of each class's log-odds values are formed, and the hit
probabilities of those regions per class (design matrix) and on the test
holdout (response) give a least-squares system whose constrained solution
recovers the proportions, because outliers essentially never land in the
regions. Both fold directions are solved and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, class_subset, derive_seed, split_half, subset
from .learners import BinaryScorer, LearnerConfig, fit_binary, fit_kde_1d
from .learners.kde import DensityModel1D

_TAG_TRAIN_SPLIT = 1
_TAG_TEST_SPLIT = 2
_TAG_ETA = 3

CONDITION_FLAG = 1e8


@dataclass
class EtaModel:
    """Per-class log-odds score functions eta_l(x) for one fold.

    eta_l is the logit of a class-l-vs-test binary score, clipped away
    from 0/1 so the values stay finite.
    """

    scorers: dict[int, BinaryScorer]
    class_count: int
    p: int

    def values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((X.shape[0], self.class_count))
        for l in range(1, self.class_count + 1):
            out[:, l - 1] = self.scorers[l].logits(X)
        return out


def fit_eta(
    train_fold: Dataset, test_fold: Dataset, learner: LearnerConfig, seed: int
) -> EtaModel:
    """Fit the K class-vs-test log-odds functions on one fold."""
    if train_fold.labels is None:
        raise ValueError("train fold must be labeled")
    if test_fold.n < 2:
        raise ValueError("test fold must have >= 2 rows")
    counts = np.bincount(train_fold.labels, minlength=train_fold.class_count + 1)[1:]
    if np.any(counts < 2):
        missing = [int(c + 1) for c in np.nonzero(counts < 2)[0]]
        raise ValueError(f"classes missing from train fold (need >= 2 rows): {missing}")
    scorers = {}
    for l in range(1, train_fold.class_count + 1):
        pos = class_subset(train_fold, l)
        scorers[l] = fit_binary(pos, test_fold, learner.with_seed(derive_seed(seed, l)))
    return EtaModel(scorers=scorers, class_count=train_fold.class_count, p=train_fold.p)


def lower_quantile_threshold(values: np.ndarray, zeta: float) -> float:
    """Smallest order statistic whose cumulative fraction exceeds zeta."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    j = min(math.floor(zeta * v.size), v.size - 1)
    return float(v[j])


@dataclass
class RegionModel:
    """High-density region of one class's log-odds values.

    Membership is density(t) >= threshold, where the threshold is the
    lower-zeta quantile of the fitted density over the class holdout
    values, so the holdout keeps ~(1 - zeta) of its mass in the region.
    """

    kde: DensityModel1D
    threshold: float
    zeta: float

    def contains(self, t) -> np.ndarray:
        return np.atleast_1d(self.kde.density(t)) >= self.threshold


def build_region(
    eta_values_on_class_holdout: np.ndarray,
    zeta: float,
    bandwidth: float | None = None,
) -> RegionModel:
    """Kernel density + quantile threshold over one class's holdout values."""
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must be in (0, 1)")
    kde = fit_kde_1d(eta_values_on_class_holdout, bandwidth)
    dens = kde.density(kde.values)
    return RegionModel(kde=kde, threshold=lower_quantile_threshold(dens, zeta), zeta=zeta)


@dataclass
class DesignSystem:
    """Empirical region-hit probabilities: response p_l and design P_{l,k}."""

    design: np.ndarray  # (K, K), row l, column k
    response: np.ndarray  # (K,)
    zero_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        d = np.asarray(self.design, dtype=np.float64)
        r = np.asarray(self.response, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or r.shape != (d.shape[0],):
            raise ValueError("design must be KxK with a length-K response")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(r))):
            raise ValueError("non-finite entries in the system")
        if d.min() < 0 or d.max() > 1 or r.min() < 0 or r.max() > 1:
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "design", d)
        object.__setattr__(self, "response", r)

    def condition(self) -> float:
        return float(np.linalg.cond(self.design.T @ self.design))


def assemble_system(
    regions: dict[int, RegionModel],
    eta: EtaModel,
    train_holdout: Dataset,
    test_holdout: Dataset,
) -> DesignSystem:
    """Empirical hit probabilities on the fold that did NOT fit eta/regions."""
    if train_holdout.labels is None:
        raise ValueError("train holdout must be labeled")
    k_count = eta.class_count
    eta_train = eta.values(train_holdout.features)
    eta_test = eta.values(test_holdout.features)
    design = np.empty((k_count, k_count))
    response = np.empty(k_count)
    class_rows = {}
    for k in range(1, k_count + 1):
        rows = np.nonzero(train_holdout.labels == k)[0]
        if rows.size == 0:
            raise ValueError(f"class {k} has no holdout samples")
        class_rows[k] = rows
    zero_rows = []
    for l in range(1, k_count + 1):
        hits_train = regions[l].contains(eta_train[:, l - 1])
        for k in range(1, k_count + 1):
            design[l - 1, k - 1] = float(hits_train[class_rows[k]].mean())
        response[l - 1] = float(regions[l].contains(eta_test[:, l - 1]).mean())
        if not design[l - 1].any():
            zero_rows.append(l)
    return DesignSystem(design=design, response=response, zero_rows=zero_rows)


def project_to_simplex_with_slack(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= 1}, exactly feasible.

    If clipping negatives already lands inside, that is the projection;
    otherwise the sum constraint is active and the standard sort-based
    simplex projection applies. Float dust above 1 is trimmed off the
    largest coordinate so feasibility holds exactly.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries")
    w = np.maximum(v, 0.0)
    if w.sum() > 1.0:
        u = np.sort(v)[::-1]
        css = np.cumsum(u) - 1.0
        idx = np.arange(1, v.size + 1)
        rho = np.nonzero(u > css / idx)[0][-1]
        w = np.maximum(v - css[rho] / (rho + 1), 0.0)
        while w.sum() > 1.0:
            i = int(np.argmax(w))
            w[i] = np.nextafter(w[i], 0.0)
    return w


def constrained_lstsq(
    design: np.ndarray,
    response: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, dict]:
    """Minimize ||response - design @ pi||^2 over {pi >= 0, sum <= 1}.

    Projected gradient with fixed step 1/||design^T design||_2 on the
    half-gradient, which keeps the objective non-increasing; stops when
    successive iterates differ by < tol in infinity norm.
    """
    A = np.asarray(design, dtype=np.float64)
    b = np.asarray(response, dtype=np.float64)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entries in the system")
    G = A.T @ A
    Atb = A.T @ b
    lip = float(np.linalg.norm(G, 2))
    pi = np.zeros(A.shape[1])
    trace = [float(np.sum((b - A @ pi) ** 2))]
    iterations = 0
    if lip > 0:
        step = 1.0 / lip
        for iterations in range(1, max_iter + 1):
            nxt = project_to_simplex_with_slack(pi - step * (G @ pi - Atb))
            trace.append(float(np.sum((b - A @ nxt) ** 2)))
            delta = float(np.max(np.abs(nxt - pi)))
            pi = nxt
            if delta < tol:
                break
    cond = float(np.linalg.cond(G)) if lip > 0 else float("inf")
    info = {
        "objective_trace": trace,
        "residual_norm": math.sqrt(trace[-1]),
        "iterations": iterations,
        "condition": cond,
        "ill_conditioned": bool(not math.isfinite(cond) or cond > CONDITION_FLAG),
    }
    return pi, info


def solve_constrained_ls(system: DesignSystem) -> np.ndarray:
    """Constrained proportion estimate for one fold's system."""
    pi, _ = constrained_lstsq(system.design, system.response)
    return pi


@dataclass(frozen=True)
class MixtureEstimate:
    """Averaged proportion estimate with per-fold detail and diagnostics."""

    pi: np.ndarray  # (K,)
    epsilon: float
    per_fold_pi: dict[int, np.ndarray]
    diagnostics: dict

    def __post_init__(self):
        p = np.asarray(self.pi, dtype=np.float64)
        if p.min() < 0 or p.sum() > 1.0:
            raise ValueError("infeasible proportion estimate")
        object.__setattr__(self, "pi", p)


def mix_estimate(
    train: Dataset,
    test: Dataset,
    zeta: float,
    learner: LearnerConfig,
    seed: int,
) -> MixtureEstimate:
    """Two-fold cross-fitted proportion estimation, averaged over folds.

    Fold t fits the log-odds functions; fold t' supplies the class
    holdout for regions, the design matrix, and the test holdout for the
    response. Kernel bandwidths (Silverman) are recorded per class in the
    diagnostics for auditability.
    """
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must be in (0, 1)")
    if train.labels is None:
        raise ValueError("training data must be labeled")
    if train.has_outliers():
        raise ValueError("training data must not contain outlier labels")
    counts = np.bincount(train.labels, minlength=train.class_count + 1)[1:]
    if np.any(counts < 4):
        raise ValueError("every class needs >= 4 training samples")
    if test.n < 4:
        raise ValueError("need >= 4 test rows")
    if test.p != train.p:
        raise ValueError("train/test feature dimensions differ")

    train_split = split_half(train, stratify=True, seed=derive_seed(seed, _TAG_TRAIN_SPLIT))
    test_split = split_half(test, stratify=False, seed=derive_seed(seed, _TAG_TEST_SPLIT))

    per_fold_pi: dict[int, np.ndarray] = {}
    diagnostics: dict = {"zeta": zeta, "folds": {}}
    for t in (1, 2):
        t_other = 3 - t
        train_t = subset(train, train_split.indices(t))
        test_t = subset(test, test_split.indices(t))
        eta = fit_eta(train_t, test_t, learner, derive_seed(seed, _TAG_ETA, t))

        # cross-fit discipline: nothing that fitted eta or its regions may
        # contribute to the empirical probabilities of this fold's system
        assert not np.intersect1d(train_split.indices(t), train_split.indices(t_other)).size
        assert not np.intersect1d(test_split.indices(t), test_split.indices(t_other)).size
        train_ho = subset(train, train_split.indices(t_other))
        test_ho = subset(test, test_split.indices(t_other))
        regions: dict[int, RegionModel] = {}
        bandwidths: dict[int, float] = {}
        for l in range(1, train.class_count + 1):
            holdout_l = class_subset(train_ho, l)
            vals = eta.values(holdout_l.features)[:, l - 1]
            regions[l] = build_region(vals, zeta)
            bandwidths[l] = regions[l].kde.bandwidth
        system = assemble_system(regions, eta, train_ho, test_ho)
        pi_t, info = constrained_lstsq(system.design, system.response)
        per_fold_pi[t] = pi_t
        diagnostics["folds"][t] = {
            "eta_fold": t,
            "holdout_fold": t_other,
            "design": system.design.tolist(),
            "response": system.response.tolist(),
            "zero_rows": system.zero_rows,
            "bandwidths": bandwidths,
            "residual_norm": info["residual_norm"],
            "iterations": info["iterations"],
            "condition": info["condition"],
            "ill_conditioned": info["ill_conditioned"],
        }

    pi = project_to_simplex_with_slack((per_fold_pi[1] + per_fold_pi[2]) / 2.0)
    epsilon = max(0.0, 1.0 - float(pi.sum()))
    return MixtureEstimate(
        pi=pi, epsilon=epsilon, per_fold_pi=per_fold_pi, diagnostics=diagnostics
    )
