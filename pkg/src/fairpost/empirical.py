"""Empirical distributions on the line and exact transport distances.

Distributions are stored as weighted atoms (ties merged).  The CDF is a
right-continuous step function and the quantile function is the generalized
inverse ``Q(p) = inf{x : p <= F(x)}``.  Because both CDFs are step functions,
the 1-Wasserstein distance ``W1 = integral |Q0 - Q1| dp`` is computed exactly
by integrating the quantile difference over the pooled set of probability
breakpoints; no grid approximation is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted weighted atoms with step CDF and generalized-inverse quantiles."""

    values: np.ndarray   # strictly increasing atom positions
    weights: np.ndarray  # positive, sums to 1
    cum_weights: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.values.size

    def cdf(self, t) -> np.ndarray | float:
        """Right-continuous step CDF evaluated at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.values, t, side="right")
        out = np.where(idx > 0, self.cum_weights[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, p) -> np.ndarray | float:
        """Generalized inverse ``inf{x : p <= F(x)}`` for p in (0, 1].

        ``quantile(0)`` is defined as the minimum atom.
        """
        p = np.asarray(p, dtype=float)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("quantile argument must lie in [0, 1]")
        idx = np.searchsorted(self.cum_weights, p, side="left")
        idx = np.minimum(idx, self.n_atoms - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SignedTransport:
    """W1 transport cost split by direction of the signed quantile gap."""

    total: float
    positive_part: float
    negative_part: float


def build_distribution(samples, weights=None) -> EmpiricalDistribution:
    """Sort samples, merge ties into weighted atoms, normalize weights."""
    values = np.asarray(samples, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empty sample list")
    if np.any(np.isnan(values)):
        raise ValueError("NaN sample")
    if weights is None:
        w = np.full(values.size, 1.0 / values.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != values.size:
            raise ValueError("weights length does not match samples")
        if np.any(np.isnan(w)) or np.any(w < 0.0):
            raise ValueError("negative weight")
        total = w.sum()
        if total <= 0.0:
            raise ValueError("weights sum to zero")
        w = w / total

    order = np.argsort(values, kind="stable")
    values = values[order]
    w = w[order]
    # merge tied values into single atoms so integration intervals are nonempty
    uniq, inverse = np.unique(values, return_inverse=True)
    merged = np.zeros(uniq.size)
    np.add.at(merged, inverse, w)
    keep = merged > 0.0
    uniq, merged = uniq[keep], merged[keep]
    merged = merged / merged.sum()
    cum = np.cumsum(merged)
    cum[-1] = 1.0
    for arr in (uniq, merged, cum):
        arr.setflags(write=False)
    return EmpiricalDistribution(values=uniq, weights=merged, cum_weights=cum)


def _quantile_segments(d0: EmpiricalDistribution, d1: EmpiricalDistribution):
    """Pooled probability breakpoints and the quantile gap on each segment.

    Returns (lengths, q0 - q1) where each segment (p_k, p_{k+1}] has constant
    quantiles for both distributions; quantiles are evaluated at the right
    endpoint since Q is left-continuous.
    """
    breaks = np.union1d(d0.cum_weights, d1.cum_weights)
    breaks = breaks[(breaks > 0.0) & (breaks <= 1.0)]
    lengths = np.diff(np.concatenate(([0.0], breaks)))
    i0 = np.minimum(np.searchsorted(d0.cum_weights, breaks, side="left"), d0.n_atoms - 1)
    i1 = np.minimum(np.searchsorted(d1.cum_weights, breaks, side="left"), d1.n_atoms - 1)
    return lengths, d0.values[i0] - d1.values[i1]


def wasserstein1(d0: EmpiricalDistribution, d1: EmpiricalDistribution) -> float:
    """Exact W1 between two empirical distributions."""
    lengths, gap = _quantile_segments(d0, d1)
    return float(np.sum(lengths * np.abs(gap)))


def wasserstein1_signed(d0: EmpiricalDistribution, d1: EmpiricalDistribution,
                        favorable_sign: int) -> SignedTransport:
    """W1 decomposed over the sets where the signed quantile gap is positive
    or negative.

    With ``d0`` the non-protected class, the positive part is the transport
    effort over quantiles where ``(Q0 - Q1) * favorable_sign > 0`` (the
    non-protected class is favored there) and the negative part covers the
    complementary quantiles.
    """
    if favorable_sign not in (-1, 1):
        raise ValueError("favorable_sign must be -1 or +1")
    lengths, gap = _quantile_segments(d0, d1)
    signed = gap * favorable_sign
    pos = float(np.sum(lengths * np.maximum(signed, 0.0)))
    neg = float(np.sum(lengths * np.maximum(-signed, 0.0)))
    return SignedTransport(total=pos + neg, positive_part=pos, negative_part=neg)


def ks_distance(d0: EmpiricalDistribution, d1: EmpiricalDistribution) -> float:
    """Kolmogorov-Smirnov distance: sup |F0 - F1| over pooled atoms."""
    grid = np.union1d(d0.values, d1.values)
    return float(np.max(np.abs(d0.cdf(grid) - d1.cdf(grid))))
