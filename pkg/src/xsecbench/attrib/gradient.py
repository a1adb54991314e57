"""Gradient-family attributions: saliency, gradient x input, integrated
gradients, DeepLIFT (Rescale rule) and GradientSHAP."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .. import kernels
from ..config import DEEPLIFT_DELTA_EPS
from ..errors import DimensionError, ValidationError
from ..netcore import Model, _ACT_CODE, as_batch, as_vector, class_score, input_gradient_batch
from .types import AttribConfig, Attribution, resolve_baseline, resolve_class


def attr_gradient(model: Model, x, class_idx: Optional[int] = None) -> Attribution:
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    g = input_gradient_batch(model, x, c)[0]
    return Attribution(g, "gradient", c, x)


def attr_gradient_x_input(model: Model, x, class_idx: Optional[int] = None) -> Attribution:
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    g = input_gradient_batch(model, x, c)[0]
    return Attribution(g * x, "gradient_x_input", c, x)


def attr_integrated_gradients(model: Model, x, class_idx: Optional[int] = None,
                              cfg: AttribConfig = AttribConfig()) -> Attribution:
    """Right-Riemann integrated gradients along the straight path from the baseline.

    ``completeness_residual`` is ``sum(scores) - (score(x) - score(baseline))``.
    """
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    b = resolve_baseline(cfg, model.in_dim)
    m = cfg.ig_steps
    delta = x - b
    alphas = np.arange(1, m + 1, dtype=np.float64) / m
    path = b[None, :] + alphas[:, None] * delta[None, :]
    grads = input_gradient_batch(model, path, c)
    scores = delta * grads.mean(axis=0)
    residual = float(scores.sum() - (class_score(model, x, c) - class_score(model, b, c)))
    return Attribution(scores, "integrated_gradients", c, x, b, residual)


def _layer_pass(model: Model, X: np.ndarray):
    zs, acts = [], [X]
    a = X
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        z = a @ layer.weights.T + layer.bias
        zs.append(z)
        if k == last and layer.activation == "softmax":
            a = z
        else:
            a = kernels._pure._activate(z, _ACT_CODE[layer.activation])
        acts.append(a)
    return zs, acts


def deeplift_multipliers(model: Model, x: np.ndarray, b: np.ndarray, c: int) -> np.ndarray:
    """Rescale-rule multipliers of the class score w.r.t. each input feature."""
    zs, acts = _layer_pass(model, np.stack([x, b]))
    g = np.zeros(model.n_classes)
    g[c] = 1.0
    last = len(model.layers) - 1
    for k in range(last, -1, -1):
        layer = model.layers[k]
        if not (k == last and layer.activation == "softmax"):
            dz = zs[k][0] - zs[k][1]
            da = acts[k + 1][0] - acts[k + 1][1]
            small = np.abs(dz) < DEEPLIFT_DELTA_EPS
            safe = np.where(small, 1.0, dz)
            deriv = kernels._pure._activation_vjp(
                zs[k][:1], acts[k + 1][:1], np.ones((1, dz.size)), _ACT_CODE[layer.activation]
            )[0]
            g = g * np.where(small, deriv, da / safe)
        g = g @ layer.weights
    return g


def attr_deeplift(model: Model, x, class_idx: Optional[int] = None,
                  cfg: AttribConfig = AttribConfig()) -> Attribution:
    """DeepLIFT with the Rescale rule; scores sum to score(x) - score(baseline)."""
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    b = resolve_baseline(cfg, model.in_dim)
    scores = (x - b) * deeplift_multipliers(model, x, b, c)
    residual = float(scores.sum() - (class_score(model, x, c) - class_score(model, b, c)))
    return Attribution(scores, "deeplift", c, x, b, residual)


def attr_gradient_shap(model: Model, x, class_idx: Optional[int] = None,
                       baselines: Optional[Sequence] = None,
                       cfg: AttribConfig = AttribConfig()) -> Attribution:
    """Expected gradients with Gaussian input noise.

    Each of ``n_samples`` draws picks a baseline uniformly, a path position
    ``t ~ U[0, 1]`` and noise ``eps ~ N(0, noise_sigma^2)``; the draw scores
    ``(x - b) * grad(b + t (x + eps - b))``. Scores are the draw average.
    """
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    if baselines is None:
        baselines = [resolve_baseline(cfg, model.in_dim)]
    B = as_batch(baselines, model.in_dim, "baselines") if len(baselines) else np.empty((0, model.in_dim))
    if B.shape[0] == 0:
        raise ValidationError("gradient_shap needs at least one baseline")
    n = cfg.samples_for("gradient_shap")
    rng = np.random.default_rng(cfg.seed)
    pick = rng.integers(0, B.shape[0], size=n)
    t = rng.uniform(0.0, 1.0, size=n)
    eps = rng.normal(0.0, 1.0, size=(n, model.in_dim)) * cfg.noise_sigma
    b = B[pick]
    points = b + t[:, None] * (x[None, :] + eps - b)
    grads = input_gradient_batch(model, points, c)
    scores = ((x[None, :] - b) * grads).mean(axis=0)
    return Attribution(scores, "gradient_shap", c, x, B.mean(axis=0))
