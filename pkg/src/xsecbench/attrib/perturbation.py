"""Perturbation attributions: occlusion, LIME and KernelSHAP."""

from __future__ import annotations

from itertools import combinations
from math import comb
from typing import Optional

import numpy as np

from ..config import KERNEL_SHAP_MAX_EXACT_DIM, LIME_NOISE_FRACTION, LIME_RIDGE
from ..errors import DegenerateError, ValidationError
from ..netcore import Model, as_vector, class_scores_batch, probabilities_batch
from .types import AttribConfig, Attribution, resolve_baseline, resolve_class


def attr_occlusion(model: Model, x, class_idx: Optional[int] = None,
                   cfg: AttribConfig = AttribConfig()) -> Attribution:
    """Drop in class score when each non-overlapping window is set to the baseline."""
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    b = resolve_baseline(cfg, model.in_dim)
    w = cfg.occlusion_window
    starts = range(0, model.in_dim, w)
    occluded = np.repeat(x[None, :], len(starts), axis=0)
    for row, s in enumerate(starts):
        occluded[row, s:s + w] = b[s:s + w]
    base = class_scores_batch(model, x, c)[0]
    drops = base - class_scores_batch(model, occluded, c)
    scores = np.repeat(drops, w)[: model.in_dim]
    return Attribution(scores, "occlusion", c, x, b)


def attr_lime(model: Model, x, class_idx: Optional[int] = None,
              cfg: AttribConfig = AttribConfig()) -> Attribution:
    """Weighted ridge surrogate fitted to Gaussian perturbations around ``x``.

    Targets the class output after the final activation. Raises
    :class:`DegenerateError` ("degenerate-neighborhood") when the kernel
    weights vanish or the normal equations cannot be solved.
    """
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    d = model.in_dim
    n = cfg.samples_for("lime")
    rng = np.random.default_rng(cfg.seed)
    sigma = LIME_NOISE_FRACTION * np.broadcast_to(np.asarray(cfg.feature_scale, dtype=np.float64), (d,))
    Z = x[None, :] + rng.normal(0.0, 1.0, size=(n, d)) * sigma
    dist2 = ((Z - x) ** 2).sum(axis=1)
    weights = np.exp(-dist2 / cfg.width_for(d) ** 2)
    y = probabilities_batch(model, Z, c)
    total = weights.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegenerateError("degenerate-neighborhood")
    zbar = weights @ Z / total
    ybar = weights @ y / total
    Zc = Z - zbar
    A = (Zc * weights[:, None]).T @ Zc + LIME_RIDGE * np.eye(d)
    rhs = (Zc * weights[:, None]).T @ (y - ybar)
    try:
        coef = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateError("degenerate-neighborhood") from None
    if not np.all(np.isfinite(coef)):
        raise DegenerateError("degenerate-neighborhood")
    return Attribution(coef, "lime", c, x, extra={"intercept": float(ybar - zbar @ coef)})


def shapley_kernel_weight(d: int, s: int) -> float:
    """Weight of a coalition of size ``s`` (0 < s < d) in the Shapley kernel."""
    return (d - 1) / (comb(d, s) * s * (d - s))


def _all_masks(d: int) -> np.ndarray:
    masks = []
    for s in range(1, d):
        for S in combinations(range(d), s):
            row = np.zeros(d)
            row[list(S)] = 1.0
            masks.append(row)
    return np.array(masks).reshape(-1, d)


def _sampled_masks(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # size s drawn with total kernel mass C(d,s)*k(s) ~ 1/(s(d-s)); each draw paired with its complement
    sizes = np.arange(1, d)
    p = 1.0 / (sizes * (d - sizes))
    p /= p.sum()
    n_pairs = max(1, (n + 1) // 2)
    drawn = rng.choice(sizes, size=n_pairs, p=p)
    masks = np.zeros((2 * n_pairs, d))
    for i, s in enumerate(drawn):
        S = rng.permutation(d)[:s]
        masks[2 * i, S] = 1.0
        masks[2 * i + 1] = 1.0 - masks[2 * i]
    return masks[:n]


def attr_kernel_shap(model: Model, x, class_idx: Optional[int] = None,
                     cfg: AttribConfig = AttribConfig()) -> Attribution:
    """KernelSHAP with the efficiency constraint imposed by substitution.

    The value of a coalition is the class output (after the final
    activation) with absent features replaced by the baseline. With
    ``cfg.shap_exact`` all coalitions are enumerated with their kernel weights
    (allowed up to 25 features); otherwise ``n_samples`` coalitions are
    drawn in proportion to the kernel and fitted with equal weights.
    """
    x = as_vector(x, model.in_dim)
    c = resolve_class(model, x, class_idx)
    b = resolve_baseline(cfg, model.in_dim)
    d = model.in_dim
    ends = probabilities_batch(model, np.stack([b, x]), c)
    v_empty, v_full = float(ends[0]), float(ends[1])
    delta = v_full - v_empty
    if d == 1:
        return Attribution(np.array([delta]), "kernel_shap", c, x, b, 0.0)

    if cfg.shap_exact:
        if d > KERNEL_SHAP_MAX_EXACT_DIM:
            raise ValidationError(f"exact KernelSHAP limited to {KERNEL_SHAP_MAX_EXACT_DIM} features; use sampling")
        masks = _all_masks(d)
        w = np.array([shapley_kernel_weight(d, int(s)) for s in masks.sum(axis=1)])
    else:
        masks = _sampled_masks(d, cfg.samples_for("kernel_shap"), np.random.default_rng(cfg.seed))
        w = np.ones(masks.shape[0])

    v = probabilities_batch(model, b[None, :] + masks * (x - b)[None, :], c)
    # eliminate the last feature: phi_last = delta - sum(phi_rest)
    y = v - v_empty - masks[:, -1] * delta
    A = masks[:, :-1] - masks[:, -1:]
    sw = np.sqrt(w)
    rest, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    phi = np.append(rest, delta - rest.sum())
    residual = float(phi.sum() - delta)
    return Attribution(phi, "kernel_shap", c, x, b, residual)
