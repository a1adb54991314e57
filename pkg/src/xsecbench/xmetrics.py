"""Functionally-grounded explanation-quality metrics and their aggregation.

An *explainer* is any callable ``(model, x, class_idx) -> scores``; see
:func:`xsecbench.attrib.make_explainer`. Metric functions return a
:class:`Score`, a ``float`` that also carries a ``degenerate`` flag for
inputs where the statistic is undefined (the value is then 0, never NaN).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .config import RATING_DECIMALS, ROS_EPS
from .errors import ValidationError
from .netcore import Model, as_vector, logits_batch, probabilities_batch, randomize_parameters

Explainer = Callable[[Model, np.ndarray, int], np.ndarray]


class Score(float):
    """A float with a ``degenerate`` flag."""

    degenerate: bool

    def __new__(cls, value: float, degenerate: bool = False):
        obj = super().__new__(cls, value)
        obj.degenerate = bool(degenerate)
        return obj

    def __repr__(self):
        return f"Score({float(self)!r}, degenerate={self.degenerate})"


@dataclass(frozen=True)
class MetricConfig:
    n_subsets: int = 100
    subset_frac: float = 0.25
    ball_radius: float = 0.1
    n_perturb: int = 50
    n_randomizations: int = 10
    seed: int = 0
    baseline: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.subset_frac < 1.0:
            raise ValidationError("subset_frac must lie in (0, 1)")
        if not self.ball_radius > 0:
            raise ValidationError("ball_radius must be positive")
        if self.n_subsets < 2 or self.n_perturb < 1 or self.n_randomizations < 1:
            raise ValidationError("n_subsets >= 2, n_perturb >= 1 and n_randomizations >= 1 required")

    def baseline_for(self, dim: int) -> np.ndarray:
        return np.zeros(dim) if self.baseline is None else as_vector(self.baseline, dim, "baseline")


METRICS = (
    "faithfulness",
    "continuity",
    "monotonicity",
    "max_sensitivity",
    "relative_output_stability",
    "randomization",
    "sparsity",
    "complexity",
)
HIGHER_BETTER = {
    "faithfulness": True,
    "continuity": False,
    "monotonicity": True,
    "max_sensitivity": False,
    "relative_output_stability": False,
    "randomization": True,
    "sparsity": True,
    "complexity": False,
}
METRIC_TITLES = {
    "faithfulness": "Faithfulness",
    "continuity": "Continuity",
    "monotonicity": "Monotonicity",
    "max_sensitivity": "Max-Sensitivity",
    "relative_output_stability": "Relative Output Stability",
    "randomization": "Model parameter randomisation",
    "sparsity": "Sparsity",
    "complexity": "Complexity",
}
METRIC_ALIASES = {"lipschitz": "continuity", "ros": "relative_output_stability",
                  "param_randomization": "randomization", "gini": "sparsity", "entropy": "complexity"}


def canonical_metric(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    key = METRIC_ALIASES.get(key, key)
    if key not in METRICS:
        raise ValidationError(f"unknown metric {name!r}; valid: {', '.join(METRICS)}")
    return key


def _pearson(a: np.ndarray, b: np.ndarray) -> Score:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    if not den > 0:
        return Score(0.0, True)
    return Score(float(np.clip((a @ b) / den, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# faithfulness family


def faithfulness(model: Model, explainer: Explainer, x, class_idx: int,
                 cfg: MetricConfig = MetricConfig()) -> Score:
    """Correlation between attribution mass of random subsets and the output
    drop when those subsets are set to the baseline."""
    x = as_vector(x, model.in_dim)
    a = np.asarray(explainer(model, x, class_idx), dtype=np.float64)
    d = x.size
    k = min(d, max(1, int(round(cfg.subset_frac * d))))
    b = cfg.baseline_for(d)
    rng = np.random.default_rng(cfg.seed)
    subsets = np.stack([rng.permutation(d)[:k] for _ in range(cfg.n_subsets)])
    masked = np.repeat(x[None, :], cfg.n_subsets, axis=0)
    rows = np.arange(cfg.n_subsets)[:, None]
    masked[rows, subsets] = b[subsets]
    p0 = probabilities_batch(model, x, class_idx)[0]
    drops = p0 - probabilities_batch(model, masked, class_idx)
    mass = a[subsets].sum(axis=1)
    return _pearson(mass, drops)


def monotonicity(model: Model, explainer: Explainer, x, class_idx: int,
                 cfg: MetricConfig = MetricConfig()) -> Score:
    """Fraction of steps on which the class output does not decrease while
    features are restored from the baseline in descending attribution order."""
    x = as_vector(x, model.in_dim)
    a = np.asarray(explainer(model, x, class_idx), dtype=np.float64)
    b = cfg.baseline_for(x.size)
    order = np.lexsort((np.arange(a.size), -a))
    path = np.repeat(b[None, :], a.size + 1, axis=0)
    for step, i in enumerate(order, start=1):
        path[step:, i] = x[i]
    p = probabilities_batch(model, path, class_idx)
    return Score(float(np.mean(np.diff(p) >= 0.0)))


# ---------------------------------------------------------------------------
# robustness family


def ball_samples(x: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """``n_perturb`` points uniform in the L-infinity ball of ``ball_radius`` around ``x``.

    Draws are prefix-stable: with a fixed seed, a larger ``n_perturb``
    extends the smaller sample set.
    """
    rng = np.random.default_rng(cfg.seed)
    u = rng.uniform(-1.0, 1.0, size=(cfg.n_perturb, x.size))
    return x[None, :] + cfg.ball_radius * u


def _neighbours(x, cfg, samples):
    return ball_samples(x, cfg) if samples is None else np.atleast_2d(np.asarray(samples, dtype=np.float64))


def lipschitz_continuity(model: Model, explainer: Explainer, x, class_idx: int,
                         cfg: MetricConfig = MetricConfig(), samples=None) -> Score:
    """Largest ratio of explanation change to input change over the ball (L2/L2)."""
    x = as_vector(x, model.in_dim)
    phi = np.asarray(explainer(model, x, class_idx), dtype=np.float64)
    best = 0.0
    for xp in _neighbours(x, cfg, samples):
        dx = np.linalg.norm(x - xp)
        if dx == 0.0:
            continue
        dphi = np.linalg.norm(phi - np.asarray(explainer(model, xp, class_idx)))
        best = max(best, dphi / dx)
    return Score(best)


def max_sensitivity(model: Model, explainer: Explainer, x, class_idx: int,
                    cfg: MetricConfig = MetricConfig(), samples=None) -> Score:
    """Largest L2 change of the explanation over Monte Carlo draws in the ball."""
    x = as_vector(x, model.in_dim)
    phi = np.asarray(explainer(model, x, class_idx), dtype=np.float64)
    best = 0.0
    for xp in _neighbours(x, cfg, samples):
        best = max(best, float(np.linalg.norm(np.asarray(explainer(model, xp, class_idx)) - phi)))
    return Score(best)


def relative_output_stability(model: Model, explainer: Explainer, x, class_idx: int,
                              cfg: MetricConfig = MetricConfig(), samples=None) -> Score:
    """Largest relative explanation change divided by the change in logits."""
    x = as_vector(x, model.in_dim)
    phi = np.asarray(explainer(model, x, class_idx), dtype=np.float64)
    pts = _neighbours(x, cfg, samples)
    lx = logits_batch(model, x)[0]
    lp = logits_batch(model, pts)
    best = 0.0
    for xp, lxp in zip(pts, lp):
        rel = (phi - np.asarray(explainer(model, xp, class_idx))) / (phi + ROS_EPS)
        den = max(float(np.linalg.norm(lx - lxp)), ROS_EPS)
        best = max(best, float(np.linalg.norm(rel)) / den)
    return Score(best)


# ---------------------------------------------------------------------------
# attribution-only metrics


def _scores(a) -> np.ndarray:
    return np.asarray(getattr(a, "scores", a), dtype=np.float64)


def sparsity_gini(a) -> Score:
    """Gini index of the absolute attributions; 0 for uniform, (n-1)/n for one-hot."""
    v = np.sort(np.abs(_scores(a)))
    n = v.size
    total = v.sum()
    if n == 0 or not total > 0:
        return Score(0.0, True)
    # pair the k-th smallest with the k-th largest: every term is non-negative and ties cancel exactly
    half = n // 2
    k = np.arange(1, half + 1)
    num = ((n + 1 - 2 * k) * (v[::-1][:half] - v[:half])).sum()
    return Score(float(num / (n * total)))


def complexity_entropy(a) -> Score:
    """Shannon entropy (nats) of the fractional absolute contributions."""
    v = np.abs(_scores(a))
    total = v.sum()
    if not total > 0:
        return Score(0.0, True)
    p = v / total
    p = p[p > 0]
    return Score(float(-(p * np.log(p)).sum()))


def spearman(a, b) -> Score:
    """Spearman rank correlation with average ranks for ties; degenerate when a side is constant."""
    ra = rankdata(np.asarray(a, dtype=np.float64))
    rb = rankdata(np.asarray(b, dtype=np.float64))
    return _pearson(ra, rb)


def randomization_seeds(seed: int, n: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def param_randomization_score(model: Model, explainer: Explainer, x, class_idx: int,
                              seed: int = 0, n_randomizations: int = 10) -> Score:
    """Mean of ``1 - max(0, rho)`` over fully randomised copies of the model,
    rho being the Spearman correlation of the two explanations.

    A constant (all-equal) explanation gives an undefined rho; it scores 0
    and is flagged degenerate.
    """
    x = as_vector(x, model.in_dim)
    phi = np.asarray(explainer(model, x, class_idx), dtype=np.float64)
    vals, degenerate = [], False
    for s in randomization_seeds(seed, n_randomizations):
        phi_r = np.asarray(explainer(randomize_parameters(model, s), x, class_idx), dtype=np.float64)
        rho = spearman(phi, phi_r)
        if rho.degenerate:
            degenerate = True
            vals.append(0.0)
        else:
            vals.append(1.0 - max(0.0, float(rho)))
    return Score(float(np.mean(vals)), degenerate)


# ---------------------------------------------------------------------------
# evaluation over a dataset and aggregation


def evaluate_metric(metric: str, model: Model, explainer: Explainer, x, class_idx: int,
                    cfg: MetricConfig = MetricConfig()) -> Score:
    m = canonical_metric(metric)
    if m == "faithfulness":
        return faithfulness(model, explainer, x, class_idx, cfg)
    if m == "monotonicity":
        return monotonicity(model, explainer, x, class_idx, cfg)
    if m == "continuity":
        return lipschitz_continuity(model, explainer, x, class_idx, cfg)
    if m == "max_sensitivity":
        return max_sensitivity(model, explainer, x, class_idx, cfg)
    if m == "relative_output_stability":
        return relative_output_stability(model, explainer, x, class_idx, cfg)
    if m == "randomization":
        return param_randomization_score(model, explainer, x, class_idx, cfg.seed, cfg.n_randomizations)
    a = explainer(model, x, class_idx)
    return sparsity_gini(a) if m == "sparsity" else complexity_entropy(a)


def cached_explainer(explainer: Explainer) -> Explainer:
    """Memoise an explainer on (model identity, input bytes, class)."""
    cache: dict = {}

    def wrapped(model, x, class_idx):
        key = (id(model), np.asarray(x, dtype=np.float64).tobytes(), int(class_idx))
        if key not in cache:
            cache[key] = (model, np.asarray(explainer(model, x, class_idx), dtype=np.float64))
        return cache[key][1]

    wrapped.__name__ = getattr(explainer, "__name__", "explainer")
    return wrapped


def evaluate_dataset(model: Model, explainers: dict, xs, classes, metrics: Sequence[str] = METRICS,
                     cfg: MetricConfig = MetricConfig()) -> dict:
    """Mean of each metric over the samples, for each named explainer.

    Sample ``i`` uses seed ``cfg.seed ^ i``; means are accumulated in sample
    order so the result does not depend on scheduling.
    """
    from dataclasses import replace

    metrics = [canonical_metric(m) for m in metrics]
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    out = {}
    for name, explainer in explainers.items():
        ex = cached_explainer(explainer)
        row = {}
        for metric in metrics:
            vals = [float(evaluate_metric(metric, model, ex, x, int(c), replace(cfg, seed=cfg.seed ^ i)))
                    for i, (x, c) in enumerate(zip(xs, classes))]
            row[metric] = float(np.mean(vals))
        out[name] = row
    return out


@dataclass
class MetricReport:
    rows: list
    cols: list
    values: np.ndarray
    directions: dict
    rating: dict
    normalized_mean: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "methods": list(self.rows),
            "metrics": list(self.cols),
            "values": [[float(v) for v in r] for r in self.values],
            "directions": {m: ("higher_better" if self.directions[m] else "lower_better") for m in self.cols},
            "rating": {k: int(v) for k, v in self.rating.items()},
            "normalized_mean": {k: float(v) for k, v in self.normalized_mean.items()},
        }

    def dumps(self, manifest: Optional[dict] = None) -> str:
        doc = self.to_dict()
        if manifest is not None:
            doc["manifest"] = manifest
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        dirs = {m: doc["directions"][m] == "higher_better" for m in doc["metrics"]}
        return cls(list(doc["methods"]), list(doc["metrics"]), np.array(doc["values"], dtype=np.float64),
                   dirs, dict(doc["rating"]), dict(doc.get("normalized_mean", {})))


def stars_for(mean: float) -> int:
    """Map a normalised mean in [0, 1] to 1..5 stars by equal quintiles."""
    m = round(float(mean), RATING_DECIMALS)
    return int(min(5, max(1, 1 + int(np.floor(m * 5)))))


def aggregate(results: dict, metrics: Optional[Sequence[str]] = None) -> MetricReport:
    """Build a :class:`MetricReport` from ``{method: {metric: value}}``.

    Each metric column is min-max normalised across methods (a constant
    column maps to 0.5), lower-is-better columns are flipped, and the
    per-method mean is binned into star ratings.
    """
    methods = list(results)
    if not methods:
        raise ValidationError("no methods to aggregate")
    if metrics is None:
        metrics = [m for m in METRICS if all(m in results[r] for r in methods)]
    metrics = [canonical_metric(m) for m in metrics]
    values = np.array([[float(results[r][m]) for m in metrics] for r in methods], dtype=np.float64)
    norm = np.empty_like(values)
    for j, m in enumerate(metrics):
        col = values[:, j]
        lo, hi = col.min(), col.max()
        span = hi - lo
        if not span > 0:
            norm[:, j] = 0.5
        else:
            norm[:, j] = (col - lo) / span
            if not HIGHER_BETTER[m]:
                norm[:, j] = 1.0 - norm[:, j]
    means = norm.mean(axis=1) if metrics else np.full(len(methods), 0.5)
    rating = {r: stars_for(mu) for r, mu in zip(methods, means)}
    return MetricReport(methods, metrics, values, {m: HIGHER_BETTER[m] for m in metrics}, rating,
                        {r: float(mu) for r, mu in zip(methods, means)})
