"""Feature-attribution methods over :class:`~xsecbench.netcore.Model`.

Every method maps ``(model, x, class, config)`` to an :class:`Attribution`
whose scores line up with the input features. When no class is given the
predicted class is explained.
"""

from __future__ import annotations

import json
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ValidationError
from ..netcore import Model
from .counterfactual import counterfactual_explain, exhaustive_single_substitutions
from .gradient import (attr_deeplift, attr_gradient, attr_gradient_shap, attr_gradient_x_input,
                       attr_integrated_gradients, deeplift_multipliers)
from .perturbation import attr_kernel_shap, attr_lime, attr_occlusion, shapley_kernel_weight
from .types import AttribConfig, Attribution, Counterfactual, resolve_baseline, resolve_class

METHODS = (
    "gradient",
    "gradient_x_input",
    "integrated_gradients",
    "deeplift",
    "gradient_shap",
    "lime",
    "kernel_shap",
    "occlusion",
)
ALIASES = {
    "ig": "integrated_gradients",
    "gxi": "gradient_x_input",
    "inputxgrad": "gradient_x_input",
    "shap": "kernel_shap",
    "saliency": "gradient",
}
DISPLAY_NAMES = {
    "gradient": "Gradient",
    "gradient_x_input": "GradientXInput",
    "integrated_gradients": "Integrated Gradient",
    "deeplift": "DeepLift",
    "gradient_shap": "GradientShap",
    "lime": "LIME",
    "kernel_shap": "SHAP",
    "occlusion": "Occlusion",
    "deepaid": "DeepAID",
}
GRADIENT_METHODS = ("gradient", "gradient_x_input", "integrated_gradients", "deeplift", "gradient_shap")


def canonical_method(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in METHODS:
        raise ValidationError(f"unknown method {name!r}; valid: {', '.join(METHODS + tuple(ALIASES))}")
    return key


def explain(model: Model, x, method: str, class_idx: Optional[int] = None,
            cfg: AttribConfig = AttribConfig(), baselines: Optional[Sequence] = None) -> Attribution:
    """Dispatch to one attribution method by name."""
    m = canonical_method(method)
    if m == "gradient":
        return attr_gradient(model, x, class_idx)
    if m == "gradient_x_input":
        return attr_gradient_x_input(model, x, class_idx)
    if m == "integrated_gradients":
        return attr_integrated_gradients(model, x, class_idx, cfg)
    if m == "deeplift":
        return attr_deeplift(model, x, class_idx, cfg)
    if m == "gradient_shap":
        return attr_gradient_shap(model, x, class_idx, baselines, cfg)
    if m == "lime":
        return attr_lime(model, x, class_idx, cfg)
    if m == "kernel_shap":
        return attr_kernel_shap(model, x, class_idx, cfg)
    return attr_occlusion(model, x, class_idx, cfg)


Explainer = Callable[[Model, np.ndarray, int], np.ndarray]


def make_explainer(method: str, cfg: AttribConfig = AttribConfig(),
                   baselines: Optional[Sequence] = None) -> Explainer:
    """Callable ``(model, x, class_idx) -> scores`` for the metrics module.

    Stochastic methods reuse ``cfg.seed`` on every call, so nearby inputs
    are explained with the same random draws.
    """
    m = canonical_method(method)

    def explainer(model: Model, x, class_idx: int) -> np.ndarray:
        return explain(model, x, m, class_idx, cfg, baselines).scores

    explainer.__name__ = m
    return explainer


def rank_features(a, k: int) -> list:
    """Top ``k`` ``(index, score)`` pairs by signed score; ties go to the lower index."""
    scores = np.asarray(a.scores if isinstance(a, Attribution) else a, dtype=np.float64)
    k = max(0, min(int(k), scores.size))
    order = np.lexsort((np.arange(scores.size), -scores))
    return [(int(i), float(scores[i])) for i in order[:k]]


def dump_attributions(records: Sequence[dict], path, manifest: Optional[dict] = None) -> None:
    """Line-delimited JSON: an optional manifest line, then one record per sample."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if manifest is not None:
            fh.write(json.dumps({"manifest": manifest}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_attributions(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "manifest" not in rec:
                out.append(rec)
    return out


__all__ = [
    "AttribConfig", "Attribution", "Counterfactual", "METHODS", "GRADIENT_METHODS", "DISPLAY_NAMES",
    "attr_gradient", "attr_gradient_x_input", "attr_integrated_gradients", "attr_deeplift",
    "attr_gradient_shap", "attr_lime", "attr_kernel_shap", "attr_occlusion",
    "counterfactual_explain", "exhaustive_single_substitutions", "canonical_method", "explain",
    "make_explainer", "rank_features", "dump_attributions", "load_attributions",
    "resolve_baseline", "resolve_class", "shapley_kernel_weight", "deeplift_multipliers",
]
