"""CART random forest: gini splits, bootstrap, per-tree majority vote.

Forest scores are vote fractions, so a forest with B trees emits values in
{0, 1/B, ..., 1}. Everything is deterministic given the seed: per-tree RNG
streams derive from (seed, tree_index), and split ties resolve by
(gain, feature index, threshold) with smaller index / threshold preferred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Tree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Vectorized routing of all rows to their leaf's class vote."""
        node = np.zeros(X.shape[0], dtype=np.int32)
        active = np.nonzero(self.feature[node] >= 0)[0]
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            nxt = np.where(go_left, self.left[cur], self.right[cur])
            node[active] = nxt
            active = active[self.feature[nxt] >= 0]
        return self.leaf_class[node]


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
    mtry: int,
    min_leaf: int,
    max_depth: int | None,
) -> Tree:
    n, p = X.shape
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_class: list[int] = []
    class_ids = np.arange(n_classes)

    # stack entries: (row indices, depth, parent node id, is_right_child)
    stack: list[tuple[np.ndarray, int, int, bool]] = [(np.arange(n), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node_id = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node_id

        labels = y[idx]
        counts = np.bincount(labels, minlength=n_classes)
        m = idx.size
        best = None
        if (
            m >= 2 * min_leaf
            and np.max(counts) < m
            and (max_depth is None or depth < max_depth)
        ):
            best = _best_split(X, idx, labels, class_ids, rng, mtry, min_leaf, counts)
        if best is None:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            leaf_class.append(int(np.argmax(counts)))  # tie -> smallest class id
            continue
        feat, thr = best
        feature.append(feat)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        leaf_class.append(-1)
        mask = X[idx, feat] <= thr
        # push right first so the left child is built next (stable numbering)
        stack.append((idx[~mask], depth + 1, node_id, True))
        stack.append((idx[mask], depth + 1, node_id, False))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        leaf_class=np.asarray(leaf_class, dtype=np.int32),
    )


def _best_split(X, idx, labels, class_ids, rng, mtry, min_leaf, counts):
    """Search mtry random features for the gini-optimal threshold.

    Returns (feature, threshold) or None when no split improves impurity.
    Candidate split s puts the s+1 smallest values left; the score
    sum_c cL^2/nL + sum_c cR^2/nR is an affine transform of the weighted
    gini, so maximizing it maximizes the gain.
    """
    p = X.shape[1]
    feats = rng.choice(p, size=mtry, replace=False)
    feats.sort()  # column order = ascending feature index, fixing tie order
    m = idx.size

    sub = X[idx][:, feats]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = labels[order]
    cum = np.cumsum(ys[:, :, None] == class_ids, axis=0, dtype=np.float64)

    nl = np.arange(1, m, dtype=np.float64)[:, None]
    cl = cum[:-1]
    cr = cum[-1][None, :, :] - cl
    score = (cl * cl).sum(axis=2) / nl + (cr * cr).sum(axis=2) / (m - nl)
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & ((m - nl) >= min_leaf)
    score[~valid] = -np.inf

    flat = np.argmax(score.T)  # feature-major: ties -> smaller feature, then threshold
    j, s = divmod(flat, m - 1)
    parent_score = float((counts.astype(np.float64) ** 2).sum()) / m
    if score[s, j] <= parent_score:  # includes the all-invalid (-inf) case
        return None
    lo, hi = xs[s, j], xs[s + 1, j]
    thr = (lo + hi) / 2.0
    if not (thr < hi):  # adjacent floats: fall back to the left value
        thr = lo
    return int(feats[j]), float(thr)


@dataclass
class RandomForest:
    """Bagged CART trees with majority-vote probabilities."""

    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 5
    mtry: int | None = None
    bootstrap: bool = True
    seed: int = 0
    n_classes: int = 0
    trees: list[Tree] = field(default_factory=list)
    # out-of-bag tallies, populated only when fit(compute_oob=True)
    oob_votes_: np.ndarray | None = None
    oob_counts_: np.ndarray | None = None

    def fit(
        self, X: np.ndarray, y: np.ndarray, n_classes: int, compute_oob: bool = False
    ) -> "RandomForest":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, p = X.shape
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(p))
        mtry = min(mtry, p)
        self.n_classes = n_classes
        self.trees = []
        self.oob_votes_ = None
        self.oob_counts_ = None
        if compute_oob and self.bootstrap:
            self.oob_votes_ = np.zeros((n, n_classes), dtype=np.float64)
            self.oob_counts_ = np.zeros(n, dtype=np.int64)
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            if self.bootstrap:
                rows = rng.integers(0, n, size=n)
                Xt, yt = X[rows], y[rows]
            else:
                Xt, yt = X, y
            tree = _grow_tree(Xt, yt, n_classes, rng, mtry, self.min_leaf, self.max_depth)
            self.trees.append(tree)
            if self.oob_votes_ is not None:
                oob = np.nonzero(np.bincount(rows, minlength=n) == 0)[0]
                if oob.size:
                    self.oob_votes_[oob, tree.apply(X[oob])] += 1.0
                    self.oob_counts_[oob] += 1
        return self

    def oob_proba(self, X: np.ndarray) -> np.ndarray:
        """Out-of-bag vote fractions for the training rows, in fit order.

        Honest scores for rows the forest has memorized: each row is voted
        on only by trees whose bootstrap missed it. Rows that every
        bootstrap happened to include (vanishingly rare) fall back to the
        full-forest vote. X must be the matrix the forest was fitted on.
        """
        if self.oob_votes_ is None:
            raise ValueError("forest was fitted without compute_oob")
        probs = np.empty_like(self.oob_votes_)
        covered = self.oob_counts_ > 0
        probs[covered] = self.oob_votes_[covered] / self.oob_counts_[covered, None]
        if np.any(~covered):
            probs[~covered] = self.predict_proba(X[~covered])
        return probs

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting each class, shape (n, K)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        votes = np.zeros((X.shape[0], self.n_classes), dtype=np.float64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, tree.apply(X)] += 1.0
        return votes / len(self.trees)

    # --- plain-python state for JSON round trips ---

    def to_state(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "mtry": self.mtry,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "leaf_class": t.leaf_class.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "RandomForest":
        forest = cls(
            n_trees=state["n_trees"],
            max_depth=state["max_depth"],
            min_leaf=state["min_leaf"],
            mtry=state["mtry"],
            bootstrap=state["bootstrap"],
            seed=state["seed"],
            n_classes=state["n_classes"],
        )
        forest.trees = [
            Tree(
                feature=np.asarray(t["feature"], dtype=np.int32),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int32),
                right=np.asarray(t["right"], dtype=np.int32),
                leaf_class=np.asarray(t["leaf_class"], dtype=np.int32),
            )
            for t in state["trees"]
        ]
        return forest
