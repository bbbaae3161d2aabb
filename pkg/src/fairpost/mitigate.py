"""Bias-performance efficient frontier reconstruction.

The search draws a prior sample of post-processing parameters, scores each
once for loss and bias on a holdout split, then for every penalization level
omega runs Bayesian-optimization steps minimizing ``loss + omega * bias``
seeded with the shared prior evaluations.  Every visited parameter point is
finally evaluated on an untouched test split and the nondominated set under
(minimize bias, minimize loss) is extracted.

The default surrogate is a tree-structured Parzen estimator; a Gaussian
process with expected improvement and plain random proposals are pluggable
alternatives.  The same loop drives the model-retraining baseline where the
parameters are boosted-tree hyperparameters.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

from .bias import PartitionSpec, model_bias
from .calibrate import CalibrationError, link_linear_calibrate, logistic_refit, pava_isotonic
from .learn import Dataset, GbmConfig, log_loss, train_gbm
from .transform import CompressiveParams, PredictorTransform, build_postprocessed, focal_point

SURROGATES = ("tpe", "gp", "random")
TPE_GOOD_FRACTION = 0.25
TPE_CANDIDATES = 24
GP_CANDIDATES = 256

FRONTIER_COLUMNS = ("omega", "bias", "loss", "dominated_flag", "gamma_json")


@dataclass(frozen=True)
class SearchSpace:
    """Continuous parameter box, penalization grid and search budget."""

    bounds: tuple[tuple[str, float, float], ...]
    omegas: tuple[float, ...]
    n_prior: int
    n_bo: int
    seed: int = 0

    def __post_init__(self):
        if not self.bounds:
            raise ValueError("search space has no parameters")
        for name, lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"parameter '{name}' has invalid bounds ({lo}, {hi})")
        if self.n_prior < 1:
            raise ValueError("n_prior must be >= 1")
        if self.n_bo < 0:
            raise ValueError("n_bo must be >= 0")
        if any(w < 0 for w in self.omegas):
            raise ValueError("omega values must be nonnegative")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(b[0] for b in self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[2] for b in self.bounds])


@dataclass(frozen=True)
class FrontierPoint:
    gamma: dict
    bias: float
    loss: float
    omega: float | None  # None for prior-sample points
    evaluated_on: str    # holdout | test
    calibration_failed: bool = False


@dataclass(frozen=True)
class Frontier:
    points: tuple[FrontierPoint, ...]           # test-split evaluations
    frontier_indices: tuple[int, ...]
    holdout_points: tuple[FrontierPoint, ...] = field(default=())
    envelope_indices: tuple[int, ...] = field(default=())
    manifest: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        on_frontier = set(self.frontier_indices)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(FRONTIER_COLUMNS)
            for i, pt in enumerate(self.points):
                writer.writerow([
                    "" if pt.omega is None else repr(float(pt.omega)),
                    repr(pt.bias), repr(pt.loss),
                    0 if i in on_frontier else 1,
                    json.dumps(pt.gamma, sort_keys=True),
                ])

    def manifest_json(self) -> str:
        return json.dumps(self.manifest, indent=2, sort_keys=True)


def pareto_extract(points) -> tuple[int, ...]:
    """Indices of nondominated points under (minimize bias, minimize loss).

    A point is dominated when another point is no worse in both coordinates
    and strictly better in one.
    """
    bias, loss = _bias_loss_arrays(points)
    n = bias.size
    if n == 0:
        raise ValueError("no points to extract a frontier from")
    order = np.lexsort((loss, bias))
    keep = []
    best_prefix = np.inf  # min loss over strictly smaller bias values
    i = 0
    while i < n:
        j = i
        group_min = np.inf
        while j < n and bias[order[j]] == bias[order[i]]:
            group_min = min(group_min, loss[order[j]])
            j += 1
        if group_min < best_prefix:
            keep.extend(int(order[k]) for k in range(i, j)
                        if loss[order[k]] == group_min)
        best_prefix = min(best_prefix, group_min)
        i = j
    return tuple(sorted(keep))


def convex_envelope(points) -> tuple[int, ...]:
    """Vertices of the lower-left convex hull of the nondominated set.

    The envelope can hide attainable nondominated points, so it is an
    optional filter on top of :func:`pareto_extract`.
    """
    frontier = pareto_extract(points)
    bias, loss = _bias_loss_arrays(points)
    pts = sorted(frontier, key=lambda i: (bias[i], loss[i]))
    hull: list[int] = []
    for i in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = ((bias[hull[-2]], loss[hull[-2]]),
                                  (bias[hull[-1]], loss[hull[-1]]))
            cross = (x2 - x1) * (loss[i] - y1) - (bias[i] - x1) * (y2 - y1)
            if cross <= 0:  # middle point is above the chord; drop it
                hull.pop()
            else:
                break
        hull.append(i)
    return tuple(hull)


def _bias_loss_arrays(points):
    if len(points) and isinstance(points[0], FrontierPoint):
        bias = np.array([p.bias for p in points])
        loss = np.array([p.loss for p in points])
    else:
        arr = np.asarray(points, dtype=float)
        bias, loss = arr[:, 0], arr[:, 1]
    return bias, loss


# ---------------------------------------------------------------------------
# surrogate proposal strategies

def _kde_log_density(data, bw, pts, lo, hi):
    z = (pts[:, None] - data[None, :]) / bw
    comps = np.exp(-0.5 * z * z) / (bw * np.sqrt(2.0 * np.pi))
    width = max(hi - lo, 1e-12)
    dens = (comps.sum(axis=1) + 1.0 / width) / (data.size + 1)
    return np.log(np.maximum(dens, 1e-300))


def _bandwidth(data, lo, hi):
    spread = float(np.std(data))
    bw = 1.06 * spread * max(data.size, 2) ** -0.2
    return max(bw, 1e-3 * max(hi - lo, 1e-12))


def _tpe_propose(rng, lo, hi, xs, ys):
    n = ys.size
    n_good = max(1, min(int(np.ceil(TPE_GOOD_FRACTION * n)), n - 1))
    order = np.argsort(ys, kind="stable")
    good, bad = xs[order[:n_good]], xs[order[n_good:]]
    d = lo.size
    cands = np.empty((TPE_CANDIDATES, d))
    for j in range(d):
        bw = _bandwidth(good[:, j], lo[j], hi[j])
        comp = rng.integers(0, good.shape[0] + 1, size=TPE_CANDIDATES)
        uniform = rng.uniform(lo[j], hi[j], size=TPE_CANDIDATES)
        centers = good[np.minimum(comp, good.shape[0] - 1), j]
        normal = centers + bw * rng.standard_normal(TPE_CANDIDATES)
        cands[:, j] = np.clip(np.where(comp == good.shape[0], uniform, normal),
                              lo[j], hi[j])
    score = np.zeros(TPE_CANDIDATES)
    for j in range(d):
        score += _kde_log_density(good[:, j], _bandwidth(good[:, j], lo[j], hi[j]),
                                  cands[:, j], lo[j], hi[j])
        score -= _kde_log_density(bad[:, j], _bandwidth(bad[:, j], lo[j], hi[j]),
                                  cands[:, j], lo[j], hi[j])
    return cands[int(np.argmax(score))]


def _gp_propose(rng, lo, hi, xs, ys):
    span = np.maximum(hi - lo, 1e-12)
    xn = (xs - lo) / span
    mu_y, sd_y = float(np.mean(ys)), max(float(np.std(ys)), 1e-12)
    yn = (ys - mu_y) / sd_y
    ls = 0.2

    def kernel(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-0.5 * d2 / (ls * ls))

    gram = kernel(xn, xn) + 1e-6 * np.eye(xn.shape[0])
    chol = np.linalg.cholesky(gram)
    alpha = solve_triangular(chol.T, solve_triangular(chol, yn, lower=True),
                             lower=False)
    cands = rng.uniform(0.0, 1.0, size=(GP_CANDIDATES, lo.size))
    ks = kernel(cands, xn)
    mean = ks @ alpha
    v = solve_triangular(chol, ks.T, lower=True)
    var = np.maximum(1.0 - (v * v).sum(axis=0), 1e-12)
    sd = np.sqrt(var)
    best = float(np.min(yn))
    z = (best - mean) / sd
    ei = sd * (z * norm.cdf(z) + norm.pdf(z))
    return lo + cands[int(np.argmax(ei))] * span


def _propose(surrogate, rng, lo, hi, xs, ys):
    if surrogate == "random" or ys.size < 2:
        return rng.uniform(lo, hi)
    try:
        if surrogate == "tpe":
            return _tpe_propose(rng, lo, hi, xs, ys)
        if surrogate == "gp":
            return _gp_propose(rng, lo, hi, xs, ys)
        raise ValueError(f"unknown surrogate '{surrogate}'")
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        warnings.warn(f"surrogate proposal failed ({exc}); falling back to a "
                      "random draw", stacklevel=2)
        return rng.uniform(lo, hi)


# ---------------------------------------------------------------------------
# generic search loop

def _frontier_search(space: SearchSpace, evaluate, describe, surrogate: str,
                     manifest_extra: dict) -> Frontier:
    """Run the prior + per-omega Bayesian loop over ``evaluate``.

    ``evaluate(vector)`` returns (holdout_loss, holdout_bias, test_loss,
    test_bias, calibration_failed); evaluation is pure, so the final
    test-split numbers can be collected as points are visited.
    """
    if surrogate not in SURROGATES:
        raise ValueError(f"unknown surrogate '{surrogate}'")
    lo, hi = space.lo, space.hi
    rng = np.random.default_rng(space.seed)

    cache: dict[bytes, tuple] = {}

    def scored(vec):
        key = np.asarray(vec, dtype=float).tobytes()
        if key not in cache:
            cache[key] = evaluate(np.asarray(vec, dtype=float))
        return cache[key]

    prior = [rng.uniform(lo, hi) for _ in range(space.n_prior)]
    visited: list[tuple[np.ndarray, float | None]] = [(v, None) for v in prior]
    for vec in prior:
        scored(vec)

    for j, omega in enumerate(space.omegas):
        rng_j = np.random.default_rng([space.seed, 1000 + j])
        hist_x = [np.asarray(v, dtype=float) for v in prior]
        hist_y = [scored(v)[0] + omega * scored(v)[1] for v in prior]
        for _ in range(space.n_bo):
            vec = _propose(surrogate, rng_j, lo, hi, np.asarray(hist_x),
                           np.asarray(hist_y))
            res = scored(vec)
            hist_x.append(np.asarray(vec, dtype=float))
            hist_y.append(res[0] + omega * res[1])
            visited.append((np.asarray(vec, dtype=float), float(omega)))

    test_points = []
    holdout_points = []
    for vec, omega in visited:
        loss_h, bias_h, loss_t, bias_t, calib_failed = scored(vec)
        gamma = describe(vec)
        test_points.append(FrontierPoint(gamma=gamma, bias=bias_t, loss=loss_t,
                                         omega=omega, evaluated_on="test",
                                         calibration_failed=calib_failed))
        holdout_points.append(FrontierPoint(gamma=gamma, bias=bias_h, loss=loss_h,
                                            omega=omega, evaluated_on="holdout",
                                            calibration_failed=calib_failed))

    frontier_idx = pareto_extract(test_points)
    envelope_idx = convex_envelope(test_points)
    manifest = {
        "seed": space.seed,
        "n_prior": space.n_prior,
        "n_bo": space.n_bo,
        "omegas": list(space.omegas),
        "bounds": [[n, lo_, hi_] for n, lo_, hi_ in space.bounds],
        "surrogate": surrogate,
    }
    manifest.update(manifest_extra)
    return Frontier(points=tuple(test_points), frontier_indices=frontier_idx,
                    holdout_points=tuple(holdout_points),
                    envelope_indices=envelope_idx, manifest=manifest)


# ---------------------------------------------------------------------------
# post-processing family

def transform_search_space(impact_list, transform_kind: str, a_bounds=(0.5, 2.0),
                           sigma_bounds=(1.0, 2.0), omegas=(0.0,), n_prior=100,
                           n_bo=20, seed=0,
                           feature_names: tuple[str, ...] | None = None) -> SearchSpace:
    """Parameter box for one transform family over the impact list."""
    indices = tuple(impact_list.M) if hasattr(impact_list, "M") else tuple(impact_list)
    bounds = []
    for i in indices:
        label = feature_names[i] if feature_names is not None else f"x{i + 1}"
        if transform_kind == "global":
            bounds.append((f"a_{label}", float(a_bounds[0]), float(a_bounds[1])))
        elif transform_kind == "asymmetric":
            bounds.append((f"a_minus_{label}", float(a_bounds[0]), float(a_bounds[1])))
            bounds.append((f"a_plus_{label}", float(a_bounds[0]), float(a_bounds[1])))
        elif transform_kind == "local":
            bounds.append((f"a_{label}", float(a_bounds[0]), float(a_bounds[1])))
            bounds.append((f"sigma_{label}", float(sigma_bounds[0]), float(sigma_bounds[1])))
        else:
            raise ValueError(f"unknown transform kind '{transform_kind}'")
    return SearchSpace(bounds=tuple(bounds), omegas=tuple(float(w) for w in omegas),
                       n_prior=n_prior, n_bo=n_bo, seed=seed)


def _params_from_vector(vec, indices, transform_kind, focals, focal_rule, names):
    transforms = []
    k = 0
    for i in indices:
        if transform_kind == "global":
            params = (float(vec[k]),)
            k += 1
        else:  # asymmetric and local both take two parameters
            params = (float(vec[k]), float(vec[k + 1]))
            k += 2
        transforms.append(PredictorTransform(
            predictor=i, kind=transform_kind, params=params, focal=focals[i],
            focal_rule=focal_rule, name=names[i] if names else f"x{i + 1}"))
    return CompressiveParams(transforms=tuple(transforms))


def _fit_calibration(method, post_scores, base_scores, labels):
    if method is None or method == "none":
        return None
    if method == "link_linear":
        return link_linear_calibrate(post_scores, base_scores)
    if method == "pava":
        return pava_isotonic(post_scores, base_scores)
    if method == "logistic_refit":
        return logistic_refit(post_scores, labels)
    raise ValueError(f"unknown calibration method '{method}'")


def build_calibrated(model, impact_list, params: CompressiveParams, data: Dataset,
                     calibration: str | None = "link_linear"):
    """Post-process then calibrate against the base model on ``data``.

    Returns ``(post_processed_model, calibration_failed)``; a failed fit
    (non-monotone or degenerate) leaves the model uncalibrated.
    """
    post = build_postprocessed(model, impact_list, params, x=data.x)
    failed = False
    calib = None
    try:
        calib = _fit_calibration(calibration, post(data.x),
                                 np.asarray(model(data.x), dtype=float), data.y)
    except CalibrationError:
        failed = True
    if calib is not None:
        post = replace(post, calibration=calib)
    return post, failed


def _loss_and_bias(scores, data: Dataset, partition, favorable_sign):
    loss = log_loss(data.y, scores)
    report = model_bias(scores, data.g, partition, favorable_sign,
                        columns=data.columns)
    return loss, report.total


def objective(model, params: CompressiveParams, data: Dataset, omega: float,
              partition: PartitionSpec | None = None, favorable_sign: int = 1,
              calibration: str | None = "link_linear",
              calibration_data: Dataset | None = None) -> float:
    """Penalized objective ``log_loss + omega * bias`` of the calibrated
    post-processed model on one split.

    Calibration is fitted on ``calibration_data`` (the evaluation split by
    default); a failed fit falls back to the uncalibrated model with a
    warning.
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    fit_data = calibration_data if calibration_data is not None else data
    fitted, failed = build_calibrated(model, params.indices, params, fit_data,
                                      calibration)
    if failed:
        warnings.warn("calibration failed; objective uses the uncalibrated "
                      "post-processed model", stacklevel=2)
    loss, bias = _loss_and_bias(fitted(data.x), data, partition, favorable_sign)
    return loss + omega * bias


def run_algorithm1(model, train: Dataset, holdout: Dataset, test: Dataset,
                   impact_list, space: SearchSpace, transform_kind: str = "global",
                   focal_rule: str = "mean", partition: PartitionSpec | None = None,
                   favorable_sign: int = 1, calibration: str | None = "link_linear",
                   surrogate: str = "tpe") -> Frontier:
    """Efficient-frontier reconstruction over the post-processed family.

    Focal points come from the training split; calibration is fitted on the
    holdout split (the in-loop data); the frontier is reported on the test
    split.
    """
    indices = tuple(impact_list.M) if hasattr(impact_list, "M") else tuple(int(i) for i in impact_list)
    if not indices:
        raise ValueError("impact list is empty")
    names = train.feature_names
    focals = {i: focal_point(train.x, i, rule=focal_rule, g=train.g) for i in indices}
    dims_per = {"global": 1, "asymmetric": 2, "local": 2}[transform_kind]
    if len(space.bounds) != dims_per * len(indices):
        raise ValueError(
            f"search space has {len(space.bounds)} parameters but the "
            f"{transform_kind} family over {len(indices)} predictors needs "
            f"{dims_per * len(indices)}")

    def evaluate(vec):
        params = _params_from_vector(vec, indices, transform_kind, focals,
                                     focal_rule, names)
        fitted, failed = build_calibrated(model, indices, params, holdout,
                                          calibration)
        loss_h, bias_h = _loss_and_bias(fitted(holdout.x), holdout, partition,
                                        favorable_sign)
        loss_t, bias_t = _loss_and_bias(fitted(test.x), test, partition,
                                        favorable_sign)
        return loss_h, bias_h, loss_t, bias_t, failed

    def describe(vec):
        return dict(zip(space.names, (float(v) for v in vec)))

    extra = {
        "family": "postprocess",
        "transform_kind": transform_kind,
        "focal_rule": focal_rule,
        "focal_points": {names[i]: focals[i] for i in indices},
        "impact_list": list(indices),
        "calibration": calibration,
        "favorable_sign": favorable_sign,
        "splits": {"train": train.n_rows, "holdout": holdout.n_rows,
                   "test": test.n_rows},
    }
    return _frontier_search(space, evaluate, describe, surrogate, extra)


GBM_BASELINE_BOUNDS = (
    ("n_estimators", 40.0, 250.0),
    ("max_leaves", 4.0, 20.0),
    ("max_depth", 2.0, 20.0),
    ("learning_rate", 0.05, 0.5),
)


def run_hyperparam_baseline(train: Dataset, holdout: Dataset, test: Dataset,
                            space: SearchSpace | None = None,
                            omegas=(0.0,), n_prior=50, n_bo=10, seed=0,
                            partition: PartitionSpec | None = None,
                            favorable_sign: int = 1, min_samples_leaf: int = 50,
                            surrogate: str = "tpe") -> Frontier:
    """Frontier search over boosted-tree hyperparameters, retraining at every
    evaluation; the comparison baseline for the post-processing family."""
    if space is None:
        space = SearchSpace(bounds=GBM_BASELINE_BOUNDS,
                            omegas=tuple(float(w) for w in omegas),
                            n_prior=n_prior, n_bo=n_bo, seed=seed)

    def config_from(vec):
        named = dict(zip(space.names, vec))
        return GbmConfig(
            n_estimators=int(round(named["n_estimators"])),
            max_leaves=int(round(named["max_leaves"])),
            max_depth=int(round(named["max_depth"])),
            learning_rate=float(named["learning_rate"]),
            min_samples_leaf=min_samples_leaf,
        )

    def evaluate(vec):
        gbm = train_gbm(train.x, train.y, config_from(vec))
        loss_h, bias_h = _loss_and_bias(gbm(holdout.x), holdout, partition,
                                        favorable_sign)
        loss_t, bias_t = _loss_and_bias(gbm(test.x), test, partition,
                                        favorable_sign)
        return loss_h, bias_h, loss_t, bias_t, False

    def describe(vec):
        cfg = config_from(vec)
        return {"n_estimators": cfg.n_estimators, "max_leaves": cfg.max_leaves,
                "max_depth": cfg.max_depth, "learning_rate": cfg.learning_rate}

    extra = {
        "family": "gbm_hyperparameters",
        "min_samples_leaf": min_samples_leaf,
        "favorable_sign": favorable_sign,
        "splits": {"train": train.n_rows, "holdout": holdout.n_rows,
                   "test": test.n_rows},
    }
    return _frontier_search(space, evaluate, describe, surrogate, extra)


def best_gamma_at_omega(frontier: Frontier, omega: float = 0.0) -> dict:
    """Parameters minimizing ``loss + omega * bias`` on the holdout split."""
    pts = frontier.holdout_points
    if not pts:
        raise ValueError("frontier carries no holdout evaluations")
    scores = [p.loss + omega * p.bias for p in pts]
    return pts[int(np.argmin(scores))].gamma
