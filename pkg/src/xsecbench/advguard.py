"""Adversarial-input detection from the dispersion of feature attributions.

PGD generates adversarial inputs; the median absolute deviation or the
coefficient of IQR of an input's absolute attribution vector is compared to
a threshold to flag it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateError, ValidationError
from .netcore import Model, as_batch, as_vector, loss_input_gradient_batch

STATISTICS = ("mad", "coeff_iqr")
DIRECTIONS = ("adversarial_if_less", "adversarial_if_greater")


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.3
    alpha: float = 0.05
    iters: int = 20
    random_start: bool = False
    seed: int = 0
    clamp: Optional[tuple] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0")
        if not self.alpha > 0:
            raise ValidationError("alpha must be > 0")
        if self.iters < 1:
            raise ValidationError("iters must be >= 1")
        if self.epsilon > 0 and self.alpha > self.epsilon:
            raise ValidationError("alpha must not exceed epsilon")


def pgd_attack_batch(model: Model, xs, true_classes, cfg: PgdConfig = PgdConfig()) -> np.ndarray:
    """Untargeted L-infinity PGD on the cross-entropy loss, one row per sample.

    Each step moves by ``alpha * sign(grad)``, projects onto the epsilon ball
    around the clean input and clamps to ``cfg.clamp``.
    """
    X = as_batch(xs, model.in_dim)
    y = np.broadcast_to(np.asarray(true_classes, dtype=np.int64), (X.shape[0],))
    if cfg.epsilon == 0:
        return X.copy()
    lo = X - cfg.epsilon
    hi = X + cfg.epsilon
    if cfg.clamp is not None:
        lo = np.maximum(lo, cfg.clamp[0])
        hi = np.minimum(hi, cfg.clamp[1])
    adv = X.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        adv = np.clip(adv + rng.uniform(-cfg.epsilon, cfg.epsilon, size=X.shape), lo, hi)
    for _ in range(cfg.iters):
        _, g = loss_input_gradient_batch(model, adv, y)
        adv = np.clip(adv + cfg.alpha * np.sign(g), lo, hi)
    return adv


def pgd_attack(model: Model, x, true_class: int, cfg: PgdConfig = PgdConfig()) -> np.ndarray:
    x = as_vector(x, model.in_dim)
    return pgd_attack_batch(model, x, [true_class], cfg)[0]


def mad(v) -> float:
    """Median absolute deviation from the median (no consistency scaling)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValidationError("mad of an empty vector")
    return float(np.median(np.abs(v - np.median(v))))


def coeff_iqr(v) -> float:
    """(Q3 - Q1) / (Q3 + Q1) with linearly interpolated quartiles."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValidationError("coeff_iqr of an empty vector")
    q1, q3 = np.quantile(v, [0.25, 0.75], method="linear")
    if q3 + q1 == 0:
        raise DegenerateError("degenerate-quartiles")
    return float((q3 - q1) / (q3 + q1))


@dataclass(frozen=True)
class DispersionStats:
    mad: float
    coeff_iqr: float
    source: str = "mad"

    def value(self, statistic: Optional[str] = None) -> float:
        return self.mad if (statistic or self.source) == "mad" else self.coeff_iqr


def dispersion(scores, source: str = "mad") -> DispersionStats:
    """Both statistics on the absolute attribution values. ``coeff_iqr`` is NaN
    when the quartiles are degenerate."""
    a = np.abs(np.asarray(getattr(scores, "scores", scores), dtype=np.float64))
    try:
        ciqr = coeff_iqr(a)
    except DegenerateError:
        ciqr = float("nan")
    return DispersionStats(mad(a), ciqr, source)


def statistic_value(scores, statistic: str) -> float:
    a = np.abs(np.asarray(getattr(scores, "scores", scores), dtype=np.float64))
    if statistic == "mad":
        return mad(a)
    if statistic == "coeff_iqr":
        return coeff_iqr(a)
    raise ValidationError(f"unknown statistic {statistic!r}; expected one of {STATISTICS}")


@dataclass(frozen=True)
class ThresholdRule:
    statistic: str
    threshold: float
    direction: str = "adversarial_if_less"

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValidationError(f"unknown statistic {self.statistic!r}")
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"unknown direction {self.direction!r}")

    def flags(self, values) -> np.ndarray:
        """True where a statistic value is adversarial; equality counts as benign."""
        v = np.asarray(values, dtype=np.float64)
        if self.direction == "adversarial_if_less":
            return v < self.threshold
        return v > self.threshold

    def dumps(self, manifest: Optional[dict] = None) -> str:
        doc = asdict(self)
        if manifest is not None:
            doc["manifest"] = manifest
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ThresholdRule":
        doc = json.loads(text)
        return cls(doc["statistic"], float(doc["threshold"]), doc["direction"])


# reference rules for the MNIST and CIFAR-10 image settings
MNIST_COEFF_IQR_RULE = ThresholdRule("coeff_iqr", 0.925, "adversarial_if_less")
MNIST_MAD_RULE = ThresholdRule("mad", 0.011, "adversarial_if_greater")
CIFAR_COEFF_IQR_RULE = ThresholdRule("coeff_iqr", 0.5, "adversarial_if_less")
CIFAR_MAD_RULE = ThresholdRule("mad", 0.75, "adversarial_if_less")


def detect(a, rule: ThresholdRule) -> str:
    """``"adversarial"`` or ``"benign"`` for one attribution."""
    return "adversarial" if bool(rule.flags(statistic_value(a, rule.statistic))) else "benign"


def _prf(flags: np.ndarray, truth: np.ndarray):
    tp = int(np.sum(flags & truth))
    fp = int(np.sum(flags & ~truth))
    fn = int(np.sum(~flags & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class Calibration:
    rule: ThresholdRule
    f1: float
    separable: bool


def calibrate(benign_stats: Sequence[float], adv_stats: Sequence[float], statistic: str = "mad") -> Calibration:
    """Threshold and direction maximising F1 (adversarial = positive) on the calibration split.

    Candidates are midpoints between consecutive distinct pooled values plus
    points just outside the range. Ties go to the lower threshold, then to
    ``adversarial_if_less``. ``separable`` is true when some rule reaches F1 = 1.
    """
    ben = np.asarray(benign_stats, dtype=np.float64)
    adv = np.asarray(adv_stats, dtype=np.float64)
    if ben.size == 0 or adv.size == 0:
        raise ValidationError("calibration needs at least one benign and one adversarial value")
    values = np.concatenate([ben, adv])
    truth = np.concatenate([np.zeros(ben.size, bool), np.ones(adv.size, bool)])
    u = np.unique(values)
    pad = max(1.0, float(np.abs(u).max())) * 1e-9 + 1e-12
    cands = np.concatenate([[u[0] - pad], (u[:-1] + u[1:]) / 2.0, [u[-1] + pad]])
    best = None
    for t in cands:
        for direction in DIRECTIONS:
            rule = ThresholdRule(statistic, float(t), direction)
            f1 = _prf(rule.flags(values), truth)[2]
            if best is None or f1 > best[0]:
                best = (f1, rule)
    f1, rule = best
    return Calibration(rule, float(f1), bool(f1 == 1.0))


def auroc(benign_scores, adv_scores) -> float:
    """Probability that an adversarial score exceeds a benign one (ties count half)."""
    from scipy.stats import rankdata

    ben = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    if ben.size == 0 or adv.size == 0:
        raise ValidationError("AUROC needs both classes")
    ranks = rankdata(np.concatenate([ben, adv]))
    u = ranks[ben.size:].sum() - adv.size * (adv.size + 1) / 2.0
    return float(u / (ben.size * adv.size))


@dataclass
class DetectorResult:
    precision: float
    recall: float
    f1: float
    auroc: float
    benign_values: np.ndarray
    adversarial_values: np.ndarray
    rule: ThresholdRule

    def summary(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "auroc": self.auroc}


def evaluate_values(rule: ThresholdRule, benign_values, adv_values) -> DetectorResult:
    """Precision, recall and F1 of ``rule``; AUROC of the statistic oriented by the rule's direction."""
    ben = np.asarray(benign_values, dtype=np.float64)
    adv = np.asarray(adv_values, dtype=np.float64)
    flags = np.concatenate([rule.flags(ben), rule.flags(adv)])
    truth = np.concatenate([np.zeros(ben.size, bool), np.ones(adv.size, bool)])
    precision, recall, f1 = _prf(flags, truth)
    sign = -1.0 if rule.direction == "adversarial_if_less" else 1.0
    return DetectorResult(precision, recall, f1, auroc(sign * ben, sign * adv), ben, adv, rule)


def attribution_statistics(model: Model, explainer: Callable, xs, statistic: str, classes=None) -> np.ndarray:
    """Dispersion statistic of each sample's attribution (explaining the predicted class by default)."""
    X = as_batch(xs, model.in_dim)
    from .netcore import predict_batch

    cls = predict_batch(model, X) if classes is None else np.asarray(classes, dtype=np.int64)
    return np.array([statistic_value(explainer(model, x, int(c)), statistic) for x, c in zip(X, cls)])


def evaluate_detector(rule: ThresholdRule, benign_xs, adversarial_xs, model: Model,
                      explainer: Callable) -> DetectorResult:
    ben = attribution_statistics(model, explainer, benign_xs, rule.statistic)
    adv = attribution_statistics(model, explainer, adversarial_xs, rule.statistic)
    return evaluate_values(rule, ben, adv)


def histogram(benign_values, adv_values, bins: int = 20) -> list:
    """Shared-edge histogram rows ``(lo, hi, benign_count, adversarial_count)``."""
    ben = np.asarray(benign_values, dtype=np.float64)
    adv = np.asarray(adv_values, dtype=np.float64)
    pooled = np.concatenate([ben, adv])
    finite = pooled[np.isfinite(pooled)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    cb, _ = np.histogram(ben[np.isfinite(ben)], edges)
    ca, _ = np.histogram(adv[np.isfinite(adv)], edges)
    return [(float(edges[i]), float(edges[i + 1]), int(cb[i]), int(ca[i])) for i in range(bins)]
