"""Gaussian kernel density estimation, 1-D and product-kernel multivariate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_MIN_BANDWIDTH = 1e-6
_CHUNK = 1 << 22  # cap pairwise work at ~4M cells per block


def silverman_bandwidth(values: np.ndarray) -> float:
    """0.9 * min(SD, IQR/1.34) * n^(-1/5), floored at 1e-6.

    When exactly one of SD and IQR is zero (heavy ties), the other is used;
    returns 0.0 for fully degenerate samples so callers can reject them.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    sd = float(np.std(v, ddof=1)) if n > 1 else 0.0
    q25, q75 = np.percentile(v, [25.0, 75.0])
    iqr_scaled = float(q75 - q25) / 1.34
    candidates = [c for c in (sd, iqr_scaled) if c > 0]
    if not candidates:
        return 0.0
    return max(0.9 * min(candidates) * n ** (-0.2), _MIN_BANDWIDTH)


@dataclass(frozen=True)
class DensityModel1D:
    """Gaussian KDE over a sample of reals; density is strictly positive."""

    values: np.ndarray
    bandwidth: float

    def density(self, t) -> np.ndarray | float:
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.empty_like(t_arr)
        step = max(1, _CHUNK // max(1, self.values.size))
        for lo in range(0, t_arr.size, step):
            z = (t_arr[lo : lo + step, None] - self.values[None, :]) / self.bandwidth
            out[lo : lo + step] = np.exp(-0.5 * z * z).mean(axis=1)
        out /= self.bandwidth * np.sqrt(2.0 * np.pi)
        return out if np.ndim(t) else float(out[0])


def fit_kde_1d(values, bandwidth: float | None = None) -> DensityModel1D:
    """Fit a 1-D Gaussian KDE; bandwidth defaults to Silverman's rule.

    Without an explicit bandwidth at least 2 values with positive spread
    are required; an explicit bandwidth permits any non-empty sample.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size < 1:
        raise ValueError("need at least one value")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if bandwidth is None:
        if v.size < 2:
            raise ValueError("need >= 2 values to pick a bandwidth")
        bandwidth = silverman_bandwidth(v)
        if bandwidth == 0.0:
            raise ValueError("zero spread: supply an explicit bandwidth")
    elif bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    v.setflags(write=False)
    return DensityModel1D(values=v, bandwidth=float(bandwidth))


@dataclass(frozen=True)
class DensityModelMulti:
    """Product Gaussian kernel with one bandwidth per dimension."""

    values: np.ndarray  # (m, p)
    bandwidths: np.ndarray  # (p,)

    def log_density(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        m, p = self.values.shape
        log_norm = float(np.log(self.bandwidths).sum()) + p * _LOG_SQRT_2PI + np.log(m)
        out = np.empty(X.shape[0])
        step = max(1, _CHUNK // max(1, m))
        for lo in range(0, X.shape[0], step):
            block = X[lo : lo + step]
            quad = np.zeros((block.shape[0], m))
            for j in range(p):
                z = (block[:, j, None] - self.values[None, :, j]) / self.bandwidths[j]
                quad += z * z
            quad *= -0.5
            peak = quad.max(axis=1)
            out[lo : lo + step] = peak + np.log(np.exp(quad - peak[:, None]).sum(axis=1))
        return out - log_norm

    def density(self, X) -> np.ndarray:
        return np.exp(self.log_density(X))


def fit_kde_multi(data, bandwidths=None) -> DensityModelMulti:
    """Per-dimension Silverman bandwidths, product kernel; needs n >= 2."""
    V = np.ascontiguousarray(np.asarray(getattr(data, "features", data), dtype=np.float64))
    if V.ndim != 2 or V.shape[0] < 2:
        raise ValueError("need a 2-D sample with at least 2 rows")
    if bandwidths is None:
        bw = np.array([silverman_bandwidth(V[:, j]) for j in range(V.shape[1])])
        if np.any(bw == 0.0):
            raise ValueError("zero spread in some dimension: supply bandwidths")
    else:
        bw = np.asarray(bandwidths, dtype=np.float64)
        if bw.shape != (V.shape[1],) or np.any(bw <= 0):
            raise ValueError("need one positive bandwidth per dimension")
    V.setflags(write=False)
    bw.setflags(write=False)
    return DensityModelMulti(values=V, bandwidths=bw)
