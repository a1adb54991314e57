from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..errors import DimensionError, ValidationError
from ..netcore import Model, as_vector, predict

BaselineSpec = Union[str, np.ndarray]


@dataclass(frozen=True)
class AttribConfig:
    """Knobs shared by the attribution methods.

    ``baseline`` is ``"zeros"``, ``"train_mean"`` (then ``train_mean`` must be
    given) or an explicit array. ``n_samples`` and ``kernel_width`` default
    per method when left as ``None``. ``feature_scale`` sets the LIME
    perturbation scale (scalar or per-feature).
    """

    baseline: BaselineSpec = "zeros"
    train_mean: Optional[np.ndarray] = None
    ig_steps: int = 50
    n_samples: Optional[int] = None
    kernel_width: Optional[float] = None
    occlusion_window: int = 1
    noise_sigma: float = 0.09
    feature_scale: Union[float, np.ndarray] = 1.0
    shap_exact: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.ig_steps < 1:
            raise ValidationError("ig_steps must be >= 1")
        if self.n_samples is not None and self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ValidationError("kernel_width must be positive")
        if self.occlusion_window < 1:
            raise ValidationError("occlusion_window must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        if isinstance(self.baseline, str) and self.baseline not in ("zeros", "train_mean"):
            raise ValidationError(f"unknown baseline {self.baseline!r}")

    def samples_for(self, method: str) -> int:
        if self.n_samples is not None:
            return self.n_samples
        return 20 if method == "gradient_shap" else 1000

    def width_for(self, dim: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * np.sqrt(dim)

    def with_seed(self, seed: int) -> "AttribConfig":
        from dataclasses import replace

        return replace(self, seed=int(seed))


def resolve_baseline(cfg: AttribConfig, dim: int) -> np.ndarray:
    if isinstance(cfg.baseline, str):
        if cfg.baseline == "zeros":
            return np.zeros(dim)
        if cfg.train_mean is None:
            raise ValidationError("baseline 'train_mean' requires AttribConfig.train_mean")
        return as_vector(cfg.train_mean, dim, "train_mean")
    try:
        return as_vector(cfg.baseline, dim, "baseline")
    except DimensionError as exc:
        raise DimensionError(f"baseline shape mismatch: {exc}") from None


def resolve_class(model: Model, x: np.ndarray, class_idx: Optional[int]) -> int:
    """The explicit class if given, otherwise the predicted class."""
    if class_idx is None:
        return predict(model, x)
    c = int(class_idx)
    if not 0 <= c < model.n_classes:
        raise ValidationError(f"class index {c} out of range [0, {model.n_classes})")
    return c


@dataclass
class Attribution:
    """Signed per-feature relevance for one explained input."""

    scores: np.ndarray
    method: str
    target_class: int
    input_ref: np.ndarray
    baseline_ref: Optional[np.ndarray] = None
    completeness_residual: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != np.shape(self.input_ref):
            raise DimensionError(f"scores shape {self.scores.shape} != input shape {np.shape(self.input_ref)}")
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError(f"{self.method}: attribution contains non-finite scores")

    def to_record(self) -> dict:
        rec = {
            "method": self.method,
            "target_class": int(self.target_class),
            "scores": [float(v) for v in self.scores],
        }
        if self.completeness_residual is not None:
            rec["completeness_residual"] = float(self.completeness_residual)
        return rec


@dataclass
class Counterfactual:
    """A nearby input classified as benign.

    In ``discrete`` mode ``original``/``reference`` are event-id sequences and
    ``diff_positions`` are sequence positions; in ``continuous`` mode they are
    feature vectors and feature indices.
    """

    original: np.ndarray
    reference: np.ndarray
    diff_positions: list
    success: bool
    mode: str = "continuous"
    benign_probability: float = float("nan")

    def __post_init__(self):
        diff = [int(i) for i in np.flatnonzero(np.asarray(self.original) != np.asarray(self.reference))]
        if list(self.diff_positions) != diff:
            raise ValidationError("diff_positions must list exactly the indices where original != reference")
