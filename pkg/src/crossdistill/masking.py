"""Saliency-guided masking: rank features (by permutation) or samples (by
their own divergence) according to non-target Jensen-Shannon divergence, and
deactivate the chosen fraction.

The feature path trains two output-aligned unimodal networks first, then
scores each teacher-input column by how much shuffling it inflates the
batch-mean NCJSD between the two networks. The sample path simply scores
each sample by its own teacher/student NCJSD. In both cases a "true" mask
removes the highest-saliency entries, a "false" mask the lowest, and a
"random" mask a uniform subset.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .divergence import divergence_rows
from .losses import ce_loss
from .nn import (
    MlpParams,
    MlpSpec,
    SgdOptimizer,
    backward,
    forward,
    init_params,
    softmax,
)
from .seeding import derive_seed

MASK_MODES = ("true_mask", "false_mask", "random_mask")


class TrainingFailure(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class SaliencyVector:
    """Normalized saliency per feature column or per sample.

    ``values`` lie in [0, 1] with max exactly 1, unless everything scored
    zero (then ``all_zero`` is set and the values are left at 0).
    """

    values: np.ndarray
    mode: str  # "feature" | "sample"
    all_zero: bool = False

    def ranking(self) -> np.ndarray:
        """Indices sorted by descending saliency; ties keep ascending index."""
        n = self.values.shape[0]
        return np.lexsort((np.arange(n), -self.values))


@dataclass
class MaskPlan:
    """Which indices to deactivate; always round(ratio * total) of them."""

    mode: str
    ratio: float
    indices: np.ndarray
    rng_seed: int | None = None


def _sym_kl_and_grads(p: np.ndarray, q: np.ndarray):
    """Symmetric KL rows plus gradients w.r.t. both probability batches."""
    log_ratio = np.log(p / q)
    rows = 0.5 * np.sum(p * log_ratio, axis=1) - 0.5 * np.sum(q * log_ratio, axis=1)
    g_p = 0.5 * (log_ratio + 1.0) - 0.5 * (q / p)
    g_q = 0.5 * (-log_ratio + 1.0) - 0.5 * (p / q)
    return rows, g_p, g_q


def _probs_grad_to_logits(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    return s * (g - np.sum(g * s, axis=1, keepdims=True))


def joint_train_unimodal(
    pair,
    spec: MlpSpec,
    epochs: int,
    seed: int,
    lr: float = 0.05,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    batch_size: int = 64,
) -> tuple[MlpParams, MlpParams]:
    """Train one network per modality with an output-alignment penalty.

    Batch loss is symmetric KL between the two softmax outputs plus each
    network's own cross-entropy; both networks update every step.
    Deterministic given the seed.
    """
    f_a = init_params(spec, derive_seed(seed, "joint", "a"))
    f_b = init_params(spec, derive_seed(seed, "joint", "b"))
    opt_a = SgdOptimizer(lr, momentum, weight_decay)
    opt_b = SgdOptimizer(lr, momentum, weight_decay)
    shuffle = np.random.default_rng(derive_seed(seed, "joint", "shuffle"))
    n = pair.n_samples
    for epoch in range(epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xa, xb, yb = pair.x_a[idx], pair.x_b[idx], pair.y[idx]
            za, zb = forward(f_a, xa), forward(f_b, xb)
            p, q = softmax(za), softmax(zb)
            dist_rows, g_p, g_q = _sym_kl_and_grads(p, q)
            ce_a, ga = ce_loss(za, yb)
            ce_b, gb = ce_loss(zb, yb)
            m = idx.shape[0]
            loss = float(dist_rows.mean()) + ce_a + ce_b
            if not np.isfinite(loss):
                raise TrainingFailure(f"joint training diverged at epoch {epoch}")
            grad_za = _probs_grad_to_logits(p, g_p / m) + ga
            grad_zb = _probs_grad_to_logits(q, g_q / m) + gb
            f_a = opt_a.step(f_a, backward(f_a, xa, grad_za))
            f_b = opt_b.step(f_b, backward(f_b, xb, grad_zb))
    return f_a, f_b


def _mean_ncjsd(p: np.ndarray, q: np.ndarray, labels: np.ndarray) -> float:
    return float(divergence_rows(p, q, labels).ncjsd.mean())


def feature_saliency(
    pair,
    f_a: MlpParams,
    f_b: MlpParams,
    repeats: int = 16,
    rng_seed: int = 0,
    subtract_baseline: bool = True,
    max_samples: int | None = None,
) -> SaliencyVector:
    """Permutation saliency of every teacher-input column.

    Column i is shuffled across the batch ``repeats`` times; its score is the
    average batch-mean NCJSD between the aligned networks' outputs. With
    ``subtract_baseline`` (default) the unshuffled NCJSD is subtracted and
    the result floored at zero, so a column the teacher ignores scores
    exactly 0; the raw accumulation is available with the flag off. Scores
    are normalized by their max.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    x_a, x_b, y = pair.x_a, pair.x_b, pair.y
    if max_samples is not None and max_samples < y.shape[0]:
        x_a, x_b, y = x_a[:max_samples], x_b[:max_samples], y[:max_samples]
    n, d = x_a.shape
    q = softmax(forward(f_b, x_b))
    baseline = _mean_ncjsd(softmax(forward(f_a, x_a)), q, y)

    scores = np.zeros(d)
    for col in range(d):
        rng = np.random.default_rng(derive_seed(rng_seed, "perm", col))
        x_mod = x_a.copy()
        acc = 0.0
        for _ in range(repeats):
            x_mod[:, col] = x_a[rng.permutation(n), col]
            acc += _mean_ncjsd(softmax(forward(f_a, x_mod)), q, y)
        scores[col] = acc / repeats

    if subtract_baseline:
        scores = np.maximum(scores - baseline, 0.0)
    return _normalize(scores, "feature")


def sample_saliency(teacher_probs, student_probs, labels) -> SaliencyVector:
    """Per-sample NCJSD (k = true label), normalized by the max.

    ``ranking()`` on the result gives the descending order Algorithm-style;
    identical predictions score 0.
    """
    rows = divergence_rows(teacher_probs, student_probs, labels)
    return _normalize(rows.ncjsd.copy(), "sample")


def _normalize(scores: np.ndarray, mode: str) -> SaliencyVector:
    peak = float(scores.max()) if scores.size else 0.0
    if peak <= 0.0:
        return SaliencyVector(np.zeros_like(scores), mode, all_zero=True)
    return SaliencyVector(scores / peak, mode, all_zero=False)


def build_feature_mask(
    saliency: SaliencyVector, mode: str, ratio: float, rng_seed: int | None = None
) -> MaskPlan:
    """Pick round(ratio * total) indices to deactivate.

    true_mask takes the largest saliency values, false_mask the smallest,
    random_mask a seeded uniform draw; ties always break toward the lower
    index. Works for feature- or sample-mode saliency alike.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"mode must be one of {MASK_MODES}, got {mode!r}")
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    total = saliency.values.shape[0]
    n_mask = int(np.floor(ratio * total + 0.5))
    if mode == "true_mask":
        chosen = saliency.ranking()[:n_mask]
    elif mode == "false_mask":
        chosen = np.lexsort((np.arange(total), saliency.values))[:n_mask]
    else:
        if rng_seed is None:
            raise ValueError("random_mask requires rng_seed")
        rng = np.random.default_rng(rng_seed)
        chosen = rng.choice(total, size=n_mask, replace=False)
    return MaskPlan(mode, float(ratio), np.sort(chosen).astype(np.intp), rng_seed)


def apply_feature_mask(x: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Zero out the planned columns; input is left untouched."""
    out = np.array(x, dtype=np.float64, copy=True)
    if plan.indices.size:
        if plan.indices.max() >= x.shape[1]:
            raise ValueError("mask index out of range for this matrix")
        out[:, plan.indices] = 0.0
    return out


def apply_sample_mask(kd_term_weights: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Zero the imitation-term weight of the planned samples, keep the rest."""
    out = np.array(kd_term_weights, dtype=np.float64, copy=True)
    if plan.indices.size:
        if plan.indices.max() >= out.shape[0]:
            raise ValueError("mask index out of range for this batch")
        out[plan.indices] = 0.0
    return out


def write_saliency_csv(saliency: SaliencyVector, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,saliency\n")
        for i, v in enumerate(saliency.values):
            fh.write(f"{i},{float(v)!r}\n")


def write_mask_plan_csv(plan: MaskPlan, path) -> None:
    """Single row: mode, ratio, then the deactivated indices."""
    with open(path, "w", encoding="utf-8") as fh:
        cells = [plan.mode, repr(plan.ratio)] + [str(int(i)) for i in plan.indices]
        fh.write(",".join(cells) + "\n")
