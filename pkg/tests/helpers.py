"""Shared test oracles, all independent of the library's production paths."""

import itertools

import numpy as np

from fairpost.explain import marginal_game_values


def riemann_w1(a, b, n_points=100_000):
    """W1 via a uniform Riemann grid over quantile levels."""
    p = (np.arange(n_points) + 0.5) / n_points
    qa = np.quantile(np.asarray(a, dtype=float), p, method="inverted_cdf")
    qb = np.quantile(np.asarray(b, dtype=float), p, method="inverted_cdf")
    return float(np.mean(np.abs(qa - qb)))


def brute_force_isotonic(x, y, w=None):
    """Exact weighted isotonic LSQ by enumerating consecutive-block partitions.

    The minimizer assigns each block its weighted mean, so scanning all
    2^(n-1) partitions whose block means are nondecreasing finds the optimum.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    y, w = y[order], w[order]
    n = y.size
    best_sse, best_fit = np.inf, None
    for mask in range(1 << (n - 1)):
        cuts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        means = [np.average(y[a:b], weights=w[a:b]) for a, b in zip(cuts[:-1], cuts[1:])]
        if any(m2 < m1 for m1, m2 in zip(means[:-1], means[1:])):
            continue
        fit = np.concatenate([np.full(b - a, m) for (a, b), m in
                              zip(zip(cuts[:-1], cuts[1:]), means)])
        sse = float(np.sum(w * (y - fit) ** 2))
        if sse < best_sse:
            best_sse, best_fit = sse, fit
    out = np.empty(n)
    out[order] = best_fit
    return out


def brute_force_pareto(points):
    """O(n^2) dominance filter under (minimize, minimize)."""
    pts = np.asarray(points, dtype=float)
    keep = []
    for i in range(pts.shape[0]):
        dominated = False
        for j in range(pts.shape[0]):
            if i == j:
                continue
            if (pts[j, 0] <= pts[i, 0] and pts[j, 1] <= pts[i, 1]
                    and (pts[j, 0] < pts[i, 0] or pts[j, 1] < pts[i, 1])):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return tuple(keep)


def additive_shapley(model_parts, x, background):
    """Exact marginal Shapley for an additive model f = sum f_i(x_i)."""
    x = np.asarray(x, dtype=float)
    bg = np.asarray(background, dtype=float)
    return np.column_stack([
        part(x[:, i]) - np.mean(part(bg[:, i]))
        for i, part in enumerate(model_parts)
    ])


def conditional_game_values(model, x, subset, n_bins=6):
    """Desk-scale empirical conditional game v(S) = E[f | X_S] via binning.

    Bins each coordinate of X_S into quantile bins and averages the model
    over rows sharing a bin combination.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    preds = np.asarray(model(x), dtype=float)
    subset = sorted(subset)
    if not subset:
        return np.full(n, preds.mean())
    codes = np.zeros(n, dtype=int)
    for j in subset:
        edges = np.quantile(x[:, j], np.linspace(0, 1, n_bins + 1)[1:-1])
        codes = codes * (n_bins + 1) + np.searchsorted(edges, x[:, j])
    out = np.empty(n)
    for code in np.unique(codes):
        mask = codes == code
        out[mask] = preds[mask].mean()
    return out


def conditional_shapley(model, x, n_bins=6):
    """Exact-enumeration Shapley values of the empirical conditional game."""
    import math
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    values = {}
    for r in range(p + 1):
        for subset in itertools.combinations(range(p), r):
            values[subset] = conditional_game_values(model, x, subset, n_bins)
    fact = [math.factorial(k) for k in range(p + 1)]
    phi = np.zeros((n, p))
    for i in range(p):
        for subset, v in values.items():
            if i in subset:
                continue
            s = len(subset)
            w = fact[s] * fact[p - s - 1] / fact[p]
            with_i = tuple(sorted(subset + (i,)))
            phi[:, i] += w * (values[with_i] - v)
    return phi


def exact_game_shapley(values: dict, p: int) -> np.ndarray:
    """Shapley values of a scalar coalition game given as {bitmask: value}."""
    import math
    fact = [math.factorial(k) for k in range(p + 1)]
    w = [fact[s] * fact[p - s - 1] / fact[p] for s in range(p)]
    phi = np.zeros(p)
    for i in range(p):
        for mask in range(1 << p):
            if mask >> i & 1:
                continue
            phi[i] += w[bin(mask).count("1")] * (values[mask | 1 << i] - values[mask])
    return phi


def pdp_direct(model, x, background, i):
    """Literal double loop over rows and background for the PDP value."""
    x = np.asarray(x, dtype=float)
    bg = np.asarray(background, dtype=float)
    out = np.zeros(x.shape[0])
    for r in range(x.shape[0]):
        acc = 0.0
        for b in range(bg.shape[0]):
            row = bg[b].copy()
            row[i] = x[r, i]
            acc += float(model(row[None, :])[0])
        out[r] = acc / bg.shape[0]
    return out


__all__ = [
    "riemann_w1", "brute_force_isotonic", "brute_force_pareto",
    "additive_shapley", "conditional_game_values", "conditional_shapley",
    "exact_game_shapley", "pdp_direct", "marginal_game_values",
]
