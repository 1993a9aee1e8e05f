"""Central finite-difference check of the hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from ..tokenizer import MaskedBatch
from .config import tensor_kind
from .model import EncoderModel, as_arrays, classification_loss_and_grads, mlm_loss_and_grads

REL_TOL = 1e-4
ABS_TOL = 1e-8


@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    n_coords: int
    per_kind: dict = field(default_factory=dict)
    rel_tol: float = REL_TOL
    abs_tol: float = ABS_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.rel_tol and self.max_abs_error < self.abs_tol

    def __float__(self):
        return self.max_rel_error


def _loss_fn(model, batch, labels):
    if isinstance(batch, MaskedBatch):
        def run(m, want_grads):
            loss, grads = mlm_loss_and_grads(m, batch)
            return loss, grads
    else:
        ids, segs, mask = as_arrays(batch)

        def run(m, want_grads):
            loss, grads, _ = classification_loss_and_grads(m, ids, segs, mask, labels)
            return loss, grads
    return run


def _sample(model: EncoderModel, batch, rng, n_coords: int):
    used_rows = None
    if not isinstance(batch, MaskedBatch):
        used_rows = np.unique(as_arrays(batch)[0])
    per = ceil(n_coords / len(model.params))
    coords = []
    for name, p in model.params.items():
        k = min(per, p.size)
        if name == "emb.token" and used_rows is not None:
            rows = rng.choice(used_rows, size=k)
            cols = rng.integers(0, p.shape[1], size=k)
            flat = np.unique(np.ravel_multi_index((rows, cols), p.shape))
        else:
            flat = rng.choice(p.size, size=k, replace=False)
        coords.extend((name, int(i)) for i in flat)
    return coords


def grad_check(model: EncoderModel, batch, labels=None, epsilon: float = 1e-3,
               n_coords: int = 200, seed: int = 0, mutate: dict | None = None,
               rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> GradCheckResult:
    """Compare analytic gradients with (f(x+eps) - f(x-eps)) / 2 eps.

    ``batch`` is a list of TokenSequences or an (ids, segments, mask) triple
    together with class ``labels``, or a MaskedBatch for the MLM loss. At
    least ``n_coords`` coordinates are sampled, spread evenly over every
    tensor. A coordinate whose analytic and numeric gradients are both below
    ``abs_tol`` is judged by absolute difference instead of relative error.
    ``mutate`` maps tensor names to a factor applied to their analytic
    gradient; it exists to prove the check can fail.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checks need a float64 model")
    work = model.copy()
    run = _loss_fn(work, batch, labels)
    _, grads = run(work, True)
    for name, factor in (mutate or {}).items():
        grads[name] = grads[name] * factor

    rng = np.random.default_rng(seed)
    max_rel = max_abs = 0.0
    per_kind: dict[str, float] = {}
    coords = _sample(work, batch, rng, n_coords)
    for name, i in coords:
        p = work.params[name].reshape(-1)
        orig = p[i]
        p[i] = orig + epsilon
        f_plus, _ = run(work, False)
        p[i] = orig - epsilon
        f_minus, _ = run(work, False)
        p[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        analytic = float(grads[name].reshape(-1)[i])
        diff = abs(analytic - numeric)
        scale = max(abs(analytic), abs(numeric))
        kind = tensor_kind(name)
        if scale < abs_tol:
            max_abs = max(max_abs, diff)
            err = 0.0 if diff < abs_tol else diff / abs_tol
        else:
            err = diff / scale
            max_rel = max(max_rel, err)
        per_kind[kind] = max(per_kind.get(kind, 0.0), err)
    return GradCheckResult(max_rel, max_abs, len(coords), per_kind, rel_tol, abs_tol)
