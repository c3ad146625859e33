"""Abstention-rate and false-labeling-rate estimation, realized metrics,
tradeoff curves over alpha, and the per-point outlier score.

Estimated quantities use only training data plus the mixture proportion
estimate; realized counterparts need ground-truth test labels (outliers
marked with the reserved id). Reports carry both side by side whenever
truth is available.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import (
    METHOD_BCOPS,
    METHOD_DLS,
    METHOD_IRS,
    PredictionSet,
    PredictionSetModel,
    bcops_fit,
    dls_fit,
    irs_fit,
    members_from_ranks,
)
from .data import OUTLIER_ID, Dataset, derive_seed
from .learners import LearnerConfig
from .mixshift import MixtureEstimate, mix_estimate

_TAG_MODEL = 11
_TAG_MIX = 12


@dataclass(frozen=True)
class AbstentionReport:
    """Estimated and (optionally) realized abstention quantities at one alpha."""

    alpha: float
    gamma_k_hat: np.ndarray  # (K,) per-class self-abstention estimates
    n_test: int
    n_empty: int
    gamma_hat: float
    flr_hat: float
    no_outlier_mass: bool  # sum(pi_hat) ~ 1: gamma_hat denominator clamped
    gamma_realized: float | None = None
    flp: float | None = None


@dataclass(frozen=True)
class MetricsReport:
    """Per-class coverage / error rates plus outlier-side rates.

    type1 = 1 - coverage (observed classes only; outliers carry no
    coverage requirement). type2 for a labeled class counts sets
    containing any wrong label; for outliers it counts non-empty sets.
    accuracy is exact-match C(x) == {y} over inlier rows.
    """

    coverage: np.ndarray  # (K,); nan for classes absent from truth
    type2: np.ndarray  # (K,)
    abstention: np.ndarray  # (K,)
    class_counts: np.ndarray  # (K,)
    accuracy: float
    outlier_count: int
    type2_outlier: float | None
    abstention_outlier: float | None  # realized gamma
    flp: float | None

    @property
    def type1(self) -> np.ndarray:
        return 1.0 - self.coverage


@dataclass(frozen=True)
class TradeoffCurve:
    """Per-alpha abstention and metrics reports over an ascending grid."""

    alphas: np.ndarray
    abstention: list[AbstentionReport]
    metrics: list[MetricsReport] | None
    mixture: MixtureEstimate


def estimate_gamma_k(
    model: PredictionSetModel, train: Dataset, alpha: float
) -> np.ndarray:
    """Fraction of training class-k rows receiving an empty set.

    Each training row is scored with the held-fold machinery (see the
    conformal module); note the held-fold scorers did see their own
    calibration rows during fitting, which mildly biases these estimates.
    """
    ranks, sizes = model.training_rank_matrix(train)
    empty = ~members_from_ranks(ranks, sizes, alpha).any(axis=1)
    return _gamma_k_from_empty(empty, train.labels, model.class_count)


def _gamma_k_from_empty(empty: np.ndarray, labels: np.ndarray, k_count: int) -> np.ndarray:
    out = np.empty(k_count)
    for k in range(1, k_count + 1):
        rows = labels == k
        out[k - 1] = float(empty[rows].mean()) if rows.any() else float("nan")
    return out


def _check_rates(pi_hat: np.ndarray, gamma_k_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pi = np.asarray(pi_hat, dtype=np.float64)
    gk = np.asarray(gamma_k_hat, dtype=np.float64)
    if pi.shape != gk.shape:
        raise ValueError("pi_hat and gamma_k_hat must align")
    if pi.min() < 0 or pi.sum() > 1.0 + 1e-9:
        raise ValueError("pi_hat must be feasible (>= 0, sum <= 1)")
    return pi, gk


def estimate_gamma(
    n_test: int, n_empty: int, pi_hat: np.ndarray, gamma_k_hat: np.ndarray
) -> float:
    """Outlier abstention estimate: empty sets beyond those explained by
    the observed classes, relative to the estimated outlier mass.

    Clipped into [0, 1]; with no estimated outlier mass the denominator
    clamps to 1 (callers should flag that case).
    """
    if n_test < 1:
        raise ValueError("need n_test >= 1")
    pi, gk = _check_rates(pi_hat, gamma_k_hat)
    num = max(n_empty - n_test * float(pi @ gk), 0.0)
    den = max(n_test * (1.0 - float(pi.sum())), 1.0)
    return min(num / den, 1.0)


def estimate_flr(
    n_test: int, n_empty: int, pi_hat: np.ndarray, gamma_k_hat: np.ndarray
) -> float:
    """Estimated fraction of labeled (non-abstained) rows that are outliers."""
    if n_test < 1:
        raise ValueError("need n_test >= 1")
    pi, gk = _check_rates(pi_hat, gamma_k_hat)
    num = max(n_test - n_empty - n_test * float(pi @ (1.0 - gk)), 0.0)
    den = max(n_test - n_empty, 1.0)
    return min(num / den, 1.0)


def realized_metrics(sets: list[PredictionSet], truth: np.ndarray) -> MetricsReport:
    """Coverage, type II, exact accuracy, abstention and FLP from truth.

    truth uses class ids 1..K with OUTLIER_ID marking outliers; outliers
    enter no coverage (type I) accounting.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if len(sets) != truth.shape[0]:
        raise ValueError("sets and truth lengths differ")
    if not sets:
        raise ValueError("no prediction sets supplied")
    k_count = sets[0].ranks.shape[0]
    n = len(sets)
    contains = np.zeros((n, k_count), dtype=bool)
    sizes = np.zeros(n, dtype=np.int64)
    for i, ps in enumerate(sets):
        for k in ps.members:
            contains[i, k - 1] = True
        sizes[i] = len(ps.members)

    coverage = np.full(k_count, np.nan)
    type2 = np.full(k_count, np.nan)
    abstention = np.full(k_count, np.nan)
    class_counts = np.zeros(k_count, dtype=np.int64)
    correct = 0
    inliers = 0
    for k in range(1, k_count + 1):
        rows = truth == k
        class_counts[k - 1] = int(rows.sum())
        if not rows.any():
            continue
        coverage[k - 1] = float(contains[rows, k - 1].mean())
        wrong_extra = sizes[rows] - contains[rows, k - 1]
        type2[k - 1] = float((wrong_extra > 0).mean())
        abstention[k - 1] = float((sizes[rows] == 0).mean())
        correct += int(((sizes[rows] == 1) & contains[rows, k - 1]).sum())
        inliers += int(rows.sum())
    accuracy = correct / inliers if inliers else float("nan")

    out_rows = truth == OUTLIER_ID
    outlier_count = int(out_rows.sum())
    type2_outlier = abstention_outlier = None
    if outlier_count:
        type2_outlier = float((sizes[out_rows] > 0).mean())
        abstention_outlier = float((sizes[out_rows] == 0).mean())
    labeled = sizes > 0
    flp = float((labeled & out_rows).sum() / max(labeled.sum(), 1))
    return MetricsReport(
        coverage=coverage,
        type2=type2,
        abstention=abstention,
        class_counts=class_counts,
        accuracy=accuracy,
        outlier_count=outlier_count,
        type2_outlier=type2_outlier,
        abstention_outlier=abstention_outlier,
        flp=flp,
    )


def outlier_score(
    model: PredictionSetModel,
    x: np.ndarray,
    fold_hint: int | None,
    alpha_grid: np.ndarray,
    gamma_curve: np.ndarray,
) -> float:
    """Abstention-rate score gamma(x): the estimated gamma at the smallest
    grid alpha whose prediction set for x is empty (0 if none is).

    Emptiness is monotone in alpha, so the empty region is the upper tail
    of the grid; scanning for its first index is exact on the grid.
    """
    grid = np.asarray(alpha_grid, dtype=np.float64)
    curve = np.asarray(gamma_curve, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("alpha grid is empty")
    if grid.shape != curve.shape:
        raise ValueError("gamma_curve must align with alpha_grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("alpha grid must be strictly ascending")
    x = np.asarray(x, dtype=np.float64)
    ranks, sizes = model.rank_matrix(x[None, :], None if fold_hint is None else [fold_hint])
    thresholds = np.floor((sizes + 1) * grid[:, None, None]) / (sizes + 1)  # (G,1,K)
    empty = np.all(ranks[None, :, :] < thresholds, axis=2)[:, 0]
    idx = np.nonzero(empty)[0]
    return float(curve[idx[0]]) if idx.size else 0.0


def fit_method(
    method: str, train: Dataset, test: Dataset, learner: LearnerConfig, seed: int
) -> PredictionSetModel:
    if method == METHOD_BCOPS:
        return bcops_fit(train, test, learner, seed)
    if method == METHOD_DLS:
        return dls_fit(train, seed)
    if method == METHOD_IRS:
        return irs_fit(train, learner, seed)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class CurveEngine:
    """One fitted model + alpha-free rank matrices, reusable across alphas."""

    model: PredictionSetModel
    mixture: MixtureEstimate
    test_ranks: np.ndarray
    test_sizes: np.ndarray
    train_ranks: np.ndarray
    train_sizes: np.ndarray
    train_labels: np.ndarray
    truth: np.ndarray | None = None

    def abstention_report(self, alpha: float) -> AbstentionReport:
        empty_test = ~members_from_ranks(self.test_ranks, self.test_sizes, alpha).any(axis=1)
        empty_train = ~members_from_ranks(self.train_ranks, self.train_sizes, alpha).any(axis=1)
        gamma_k = _gamma_k_from_empty(empty_train, self.train_labels, self.model.class_count)
        n_test = self.test_ranks.shape[0]
        n_empty = int(empty_test.sum())
        pi = self.mixture.pi
        gamma_hat = estimate_gamma(n_test, n_empty, pi, gamma_k)
        flr_hat = estimate_flr(n_test, n_empty, pi, gamma_k)
        gamma_realized = flp = None
        if self.truth is not None:
            out_rows = self.truth == OUTLIER_ID
            if out_rows.any():
                gamma_realized = float(empty_test[out_rows].mean())
            labeled = ~empty_test
            flp = float((labeled & out_rows).sum() / max(labeled.sum(), 1))
        return AbstentionReport(
            alpha=alpha,
            gamma_k_hat=gamma_k,
            n_test=n_test,
            n_empty=n_empty,
            gamma_hat=gamma_hat,
            flr_hat=flr_hat,
            no_outlier_mass=bool(pi.sum() >= 1.0 - 1e-12),
            gamma_realized=gamma_realized,
            flp=flp,
        )

    def metrics_report(self, alpha: float) -> MetricsReport:
        if self.truth is None:
            raise ValueError("metrics need ground truth")
        member_matrix = members_from_ranks(self.test_ranks, self.test_sizes, alpha)
        sets = [
            PredictionSet(
                members=tuple(int(k) for k in np.nonzero(member_matrix[i])[0] + 1),
                ranks=self.test_ranks[i],
                alpha=alpha,
            )
            for i in range(member_matrix.shape[0])
        ]
        return realized_metrics(sets, self.truth)


def build_curve_engine(
    train: Dataset,
    test: Dataset,
    method: str,
    learner: LearnerConfig,
    zeta: float,
    seed: int,
    truth: np.ndarray | None = None,
    mix_learner: LearnerConfig | None = None,
) -> CurveEngine:
    """Fit once (model + mixture estimate) and precompute all rank matrices."""
    model = fit_method(method, train, test, learner, derive_seed(seed, _TAG_MODEL))
    mixture = mix_estimate(
        train, test, zeta, mix_learner or learner, derive_seed(seed, _TAG_MIX)
    )
    fold_of = model.test_fold_of if method == METHOD_BCOPS else None
    test_ranks, test_sizes = model.rank_matrix(test.features, fold_of)
    train_ranks, train_sizes = model.training_rank_matrix(train)
    return CurveEngine(
        model=model,
        mixture=mixture,
        test_ranks=test_ranks,
        test_sizes=test_sizes,
        train_ranks=train_ranks,
        train_sizes=train_sizes,
        train_labels=train.labels,
        truth=truth,
    )


def tradeoff_curve(
    train: Dataset,
    test: Dataset,
    method: str,
    learner: LearnerConfig,
    alpha_grid: np.ndarray,
    zeta: float,
    seed: int,
    truth: np.ndarray | None = None,
    mix_learner: LearnerConfig | None = None,
) -> TradeoffCurve:
    """Estimated (and realized, when truth is given) rates along an alpha grid.

    A single fit serves the whole grid: calibration is stored alpha-free
    and thresholds are recomputed per grid point.
    """
    grid = np.asarray(alpha_grid, dtype=np.float64)
    if grid.size == 0 or grid.min() <= 0.0 or grid.max() >= 1.0:
        raise ValueError("alpha grid must lie strictly inside (0, 1)")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("alpha grid must be strictly ascending")
    engine = build_curve_engine(train, test, method, learner, zeta, seed, truth, mix_learner)
    abstention = [engine.abstention_report(a) for a in grid]
    metrics = None
    if truth is not None:
        metrics = [engine.metrics_report(a) for a in grid]
    return TradeoffCurve(
        alphas=grid, abstention=abstention, metrics=metrics, mixture=engine.mixture
    )


def alpha_for_flr_control(curve: TradeoffCurve, level: float = 0.10) -> float | None:
    """Smallest grid alpha whose estimated FLR is at or below `level`."""
    for report in curve.abstention:
        if report.flr_hat <= level:
            return float(report.alpha)
    return None
