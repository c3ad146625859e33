"""Learner hyperparameter bundle shared by all fit entry points."""

from __future__ import annotations

from dataclasses import dataclass, replace

KIND_RF = "rf"
KIND_GLM = "glm"


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters for the in-repo learners.

    kind "rf": CART forest, gini splits, bootstrap resampling, majority
    vote per tree; mtry=None means ceil(sqrt(p)) features per split.
    kind "glm": penalized logistic (binary) / multinomial (multi-class)
    with L2 weight l2, optional L1 weight l1, Newton or proximal-gradient
    solver with monotone objective.
    """

    kind: str = KIND_RF
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 5
    mtry: int | None = None
    bootstrap: bool = True
    l2: float = 1e-3
    l1: float = 0.0
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (KIND_RF, KIND_GLM):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.n_trees < 1 or self.min_leaf < 1 or self.max_iter < 1:
            raise ValueError("counts must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1 or None")
        if self.l2 < 0 or self.l1 < 0:
            raise ValueError("penalties must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")

    def with_seed(self, seed: int) -> "LearnerConfig":
        return replace(self, seed=int(seed))
