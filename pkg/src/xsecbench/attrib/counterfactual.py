"""Reference-sample search in the style of DeepAID: find a nearby input the
model classifies as benign; the difference is the explanation."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..config import CF_L1_WEIGHT, CF_MAX_ITERS, CF_STEP
from ..datagen import decode_window, one_hot_window
from ..errors import NothingToExplainError, ValidationError
from ..netcore import (Model, as_vector, forward_batch, input_gradient, predict,
                       predict_batch, probabilities_batch)
from .types import AttribConfig, Counterfactual


def _greedy_substitution(model: Model, events: np.ndarray, vocab_size: int, benign: int) -> Counterfactual:
    window = events.size
    current = events.copy()
    changed: set = set()
    best_p = float(probabilities_batch(model, one_hot_window(current, vocab_size), benign)[0])
    for _ in range(window):
        cands = [(p, e) for p in range(window) if p not in changed
                 for e in range(vocab_size) if e != current[p]]
        if not cands:
            break
        trials = np.repeat(current[None, :], len(cands), axis=0)
        for row, (p, e) in enumerate(cands):
            trials[row, p] = e
        X = np.stack([one_hot_window(t, vocab_size) for t in trials])
        probs = forward_batch(model, X)
        benign_p = probs[:, benign]
        i = int(np.argmax(benign_p))  # first maximum: lowest position, then lowest event id
        p, e = cands[i]
        current[p] = e
        changed.add(p)
        best_p = float(benign_p[i])
        if int(np.argmax(probs[i])) == benign:
            return _make(events, current, True, "discrete", best_p)
    return _make(events, current, False, "discrete", best_p)


def _make(original, reference, success, mode, prob) -> Counterfactual:
    diff = [int(i) for i in np.flatnonzero(np.asarray(original) != np.asarray(reference))]
    return Counterfactual(np.asarray(original), np.asarray(reference), diff, bool(success), mode, prob)


def _soft_threshold(u: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


def _proximal_ascent(model: Model, x: np.ndarray, benign: int, step: float,
                     l1_weight: float, max_iters: int) -> Counterfactual:
    # ascend the benign logit; the L1 pull toward x is applied as a proximal step
    ref = x.copy()
    for _ in range(max_iters):
        g = input_gradient(model, ref, benign)
        ref = x + _soft_threshold(ref + step * g - x, step * l1_weight)
        if predict(model, ref) == benign:
            prob = float(probabilities_batch(model, ref, benign)[0])
            return _make(x, ref, True, "continuous", prob)
    prob = float(probabilities_batch(model, ref, benign)[0])
    return _make(x, ref, False, "continuous", prob)


def counterfactual_explain(model: Model, x, class_benign: int, mode: str = "continuous",
                           cfg: AttribConfig = AttribConfig(), vocab_size: Optional[int] = None,
                           step: float = CF_STEP, l1_weight: float = CF_L1_WEIGHT,
                           max_iters: int = CF_MAX_ITERS) -> Counterfactual:
    """Search for a benign reference close to the anomalous input ``x``.

    ``discrete`` mode expects a flattened one-hot event window and greedily
    applies single-position substitutions that maximise the benign
    probability, at most once per position, until the prediction flips.
    ``continuous`` mode runs proximal gradient ascent on the benign class
    score with an L1 pull toward ``x``. ``success`` is false when no flip was
    found; the reference is then the best candidate reached.
    """
    x = as_vector(x, model.in_dim)
    benign = int(class_benign)
    if not 0 <= benign < model.n_classes:
        raise ValidationError(f"benign class {benign} out of range [0, {model.n_classes})")
    if predict(model, x) == benign:
        raise NothingToExplainError("nothing-to-explain: input is already classified as benign")
    if mode == "discrete":
        if vocab_size is None or vocab_size < 1 or model.in_dim % vocab_size:
            raise ValidationError("discrete mode needs a vocab_size dividing the input dimension")
        events = decode_window(x, vocab_size)
        if not np.array_equal(one_hot_window(events, vocab_size), x):
            raise ValidationError("discrete mode expects a one-hot encoded event window")
        return _greedy_substitution(model, events, vocab_size, benign)
    if mode == "continuous":
        return _proximal_ascent(model, x, benign, step, l1_weight, max_iters)
    raise ValidationError(f"unknown counterfactual mode {mode!r}")


def exhaustive_single_substitutions(model: Model, events, vocab_size: int, benign: int) -> list:
    """All (position, event id) single substitutions that make the prediction benign."""
    events = np.asarray(events, dtype=np.int64)
    cands = [(p, e) for p in range(events.size) for e in range(vocab_size) if e != events[p]]
    trials = np.repeat(events[None, :], len(cands), axis=0)
    for row, (p, e) in enumerate(cands):
        trials[row, p] = e
    preds = predict_batch(model, np.stack([one_hot_window(t, vocab_size) for t in trials]))
    return [cand for cand, pred in zip(cands, preds) if pred == benign]
