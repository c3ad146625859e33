"""Penalized logistic and multinomial models with monotone solvers.

Features are standardized internally (pooled mean/SD, constant columns get
SD 1). The smooth objective (weighted NLL + L2/2 * ||w||^2, intercepts
unpenalized) is minimized by damped Newton with Armijo backtracking; with
an L1 term the solver switches to proximal gradient with backtracking.
Both keep the objective trace non-increasing.

Deterministic: no randomness anywhere in the fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ARMIJO = 1e-4
_DAMP = 1e-10


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -35.0, 35.0)))


def _softmax_full(logits: np.ndarray) -> np.ndarray:
    """Softmax over [logits, 0] reference-class parameterization."""
    full = np.concatenate([logits, np.zeros((logits.shape[0], 1))], axis=1)
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)  # constant feature: leave centered at 0
    return (X - mean) / sd, mean, sd


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _prox_gradient(theta0, smooth_val_grad, l1, prox_mask, max_iter, tol):
    """ISTA with backtracking; prox_mask marks entries the L1 prox touches.

    Returns (theta, trace of total objective values).
    """
    theta = theta0
    f, g = smooth_val_grad(theta)
    step = 1.0
    trace = [f + l1 * np.abs(theta[prox_mask]).sum()]
    for _ in range(max_iter):
        while True:
            cand = theta - step * g
            cand[prox_mask] = _soft_threshold(cand[prox_mask], step * l1)
            delta = cand - theta
            f_cand, g_cand = smooth_val_grad(cand)
            if f_cand <= f + g @ delta + (delta @ delta) / (2 * step) + 1e-12:
                break
            step *= 0.5
            if step < 1e-18:
                cand, f_cand, g_cand, delta = theta, f, g, np.zeros_like(theta)
                break
        theta, f, g = cand, f_cand, g_cand
        total = f + l1 * np.abs(theta[prox_mask]).sum()
        if trace[-1] - total < tol:
            trace.append(total)
            break
        trace.append(total)
        step = min(step * 2.0, 1.0)
    return theta, trace


def _newton(theta0, val_grad_hess, max_iter, tol):
    """Damped Newton with Armijo backtracking on a smooth convex objective."""
    theta = theta0
    f, g, make_hess = val_grad_hess(theta)
    trace = [f]
    for _ in range(max_iter):
        H = make_hess()
        H[np.diag_indices_from(H)] += _DAMP
        try:
            direction = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            direction = -g
        if g @ direction > 0:  # not a descent direction, fall back
            direction = -g
        step = 1.0
        slope = g @ direction
        while True:
            cand = theta + step * direction
            f_cand, g_cand, make_hess_cand = val_grad_hess(cand)
            if f_cand <= f + _ARMIJO * step * slope + 1e-12:
                break
            step *= 0.5
            if step < 1e-18:
                cand, f_cand, g_cand, make_hess_cand = theta, f, g, make_hess
                break
        theta, g, make_hess = cand, g_cand, make_hess_cand
        improved = f - f_cand
        f = f_cand
        trace.append(f)
        if improved < tol:
            break
    return theta, trace


@dataclass
class LogisticModel:
    """Binary logistic regression on standardized features."""

    coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sd: np.ndarray = field(default_factory=lambda: np.ones(0))
    l2: float = 1e-3
    l1: float = 0.0
    loss_trace: list[float] = field(default_factory=list)

    def fit(self, X, y01, sample_weight=None, max_iter=500, tol=1e-8):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y01, dtype=np.float64)
        n, p = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        w = w / w.mean()
        Z, self.mean, self.sd = _standardize(X)
        Za = np.concatenate([np.ones((n, 1)), Z], axis=1)
        wn = w / n

        def smooth(theta):
            z = Za @ theta
            # log(1+exp(-yz)) written stably via logaddexp
            margins = np.where(y > 0.5, z, -z)
            loss = float(wn @ np.logaddexp(0.0, -margins))
            s = _sigmoid(z)
            grad = Za.T @ (wn * (s - y))
            loss += 0.5 * self.l2 * float(theta[1:] @ theta[1:])
            grad[1:] += self.l2 * theta[1:]
            return loss, grad, s

        theta0 = np.zeros(p + 1)
        if self.l1 > 0:
            mask = np.zeros(p + 1, dtype=bool)
            mask[1:] = True
            theta, trace = _prox_gradient(
                theta0, lambda t: smooth(t)[:2], self.l1, mask, max_iter, tol
            )
        else:

            def val_grad_hess(theta):
                loss, grad, s = smooth(theta)

                def make_hess():
                    d = wn * s * (1.0 - s)
                    H = Za.T @ (Za * d[:, None])
                    H[1:, 1:] += self.l2 * np.eye(p)
                    return H

                return loss, grad, make_hess

            theta, trace = _newton(theta0, val_grad_hess, max_iter, tol)
        self.intercept = float(theta[0])
        self.coef = theta[1:]
        self.loss_trace = [float(v) for v in trace]
        return self

    def decision_function(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.sd
        return Z @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def to_state(self) -> dict:
        return {
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "l2": self.l2,
            "l1": self.l1,
        }

    @classmethod
    def from_state(cls, state: dict) -> "LogisticModel":
        model = cls(l2=state["l2"], l1=state["l1"])
        model.coef = np.asarray(state["coef"], dtype=np.float64)
        model.intercept = float(state["intercept"])
        model.mean = np.asarray(state["mean"], dtype=np.float64)
        model.sd = np.asarray(state["sd"], dtype=np.float64)
        return model


@dataclass
class MultinomialModel:
    """K-class multinomial logistic with class K as the reference."""

    weights: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (K-1, p+1)
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sd: np.ndarray = field(default_factory=lambda: np.ones(0))
    n_classes: int = 0
    l2: float = 1e-3
    l1: float = 0.0
    loss_trace: list[float] = field(default_factory=list)

    def fit(self, X, y, n_classes, sample_weight=None, max_iter=500, tol=1e-8):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)  # 0-based
        n, p = X.shape
        km = n_classes - 1
        self.n_classes = n_classes
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        wn = (w / w.mean()) / n
        Z, self.mean, self.sd = _standardize(X)
        Za = np.concatenate([np.ones((n, 1)), Z], axis=1)
        d = p + 1
        onehot = np.zeros((n, km))
        for a in range(km):
            onehot[y == a, a] = 1.0

        pen_mask = np.zeros((km, d), dtype=bool)
        pen_mask[:, 1:] = True

        def smooth(theta_flat):
            W = theta_flat.reshape(km, d)
            probs = _softmax_full(Za @ W.T)
            ll = float(wn @ np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
            loss = -ll + 0.5 * self.l2 * float((W[:, 1:] ** 2).sum())
            grad = ((probs[:, :km] - onehot) * wn[:, None]).T @ Za
            grad[:, 1:] += self.l2 * W[:, 1:]
            return loss, grad.ravel(), probs

        theta0 = np.zeros(km * d)
        if self.l1 > 0:
            theta, trace = _prox_gradient(
                theta0, lambda t: smooth(t)[:2], self.l1, pen_mask.ravel(), max_iter, tol
            )
        else:

            def val_grad_hess(theta_flat):
                loss, grad, probs = smooth(theta_flat)

                def make_hess():
                    H = np.zeros((km * d, km * d))
                    for a in range(km):
                        for b in range(a, km):
                            pa, pb = probs[:, a], probs[:, b]
                            dd = wn * (pa * ((1.0 if a == b else 0.0) - pb))
                            block = Za.T @ (Za * dd[:, None])
                            H[a * d : (a + 1) * d, b * d : (b + 1) * d] = block
                            if a != b:
                                H[b * d : (b + 1) * d, a * d : (a + 1) * d] = block
                    H[np.diag_indices_from(H)] += self.l2 * pen_mask.ravel()
                    return H

                return loss, grad, make_hess

            theta, trace = _newton(theta0, val_grad_hess, max_iter, tol)
        self.weights = theta.reshape(km, d)
        self.loss_trace = [float(v) for v in trace]
        return self

    def predict_proba(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.sd
        Za = np.concatenate([np.ones((Z.shape[0], 1)), Z], axis=1)
        return _softmax_full(Za @ self.weights.T)

    def to_state(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "n_classes": self.n_classes,
            "l2": self.l2,
            "l1": self.l1,
        }

    @classmethod
    def from_state(cls, state: dict) -> "MultinomialModel":
        model = cls(l2=state["l2"], l1=state["l1"])
        model.weights = np.asarray(state["weights"], dtype=np.float64)
        model.mean = np.asarray(state["mean"], dtype=np.float64)
        model.sd = np.asarray(state["sd"], dtype=np.float64)
        model.n_classes = int(state["n_classes"])
        return model
