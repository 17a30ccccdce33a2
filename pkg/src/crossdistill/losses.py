"""Training objectives: plain distillation and the weight-adjusted decoupled
variant that splits the imitation term into target / non-target parts.

Both losses return the scalar batch-mean loss together with its analytic
gradient w.r.t. the student logits. Teacher logits are constants: no
gradient ever flows into the teacher.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergence import divergence_rows
from .nn import softmax

_MODES = ("vanilla", "decoupled")


@dataclass
class KdLossConfig:
    """Distillation loss settings.

    ``lam`` balances hard-label cross-entropy against imitation; ``alpha`` /
    ``beta`` weight the target / non-target parts in decoupled mode (ignored
    in vanilla mode). The imitation term carries a ``temperature**2`` factor
    so its gradient scale is temperature-independent.
    """

    lam: float = 0.5
    temperature: float = 1.0
    mode: str = "vanilla"
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be nonnegative")


def _check_batch(student_logits, teacher_logits, labels):
    zs = np.asarray(student_logits, dtype=np.float64)
    zt = np.asarray(teacher_logits, dtype=np.float64)
    if zs.ndim != 2 or zs.shape != zt.shape:
        raise ValueError(f"logit shapes must match and be 2-D: {zs.shape} vs {zt.shape}")
    y = np.asarray(labels, dtype=np.intp)
    if y.shape != (zs.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch {zs.shape}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= zs.shape[1]:
        raise ValueError("label out of class range")
    return zs, zt, y


def _kd_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"kd_weights shape {w.shape} does not match batch size {n}")
    return w


def ce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy and its gradient w.r.t. the logits."""
    zs = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    n = zs.shape[0]
    p = softmax(zs)
    ce = float(-np.log(p[np.arange(n), y]).mean())
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    return ce, grad / n


def _probs_to_logits_grad(s: np.ndarray, g: np.ndarray, temperature: float) -> np.ndarray:
    """Chain a gradient w.r.t. softmax(z/T) back to the logits z."""
    inner = g - np.sum(g * s, axis=1, keepdims=True)
    return s * inner / temperature


def vanilla_kd_loss(
    student_logits,
    teacher_logits,
    labels,
    cfg: KdLossConfig,
    kd_weights=None,
) -> tuple[float, np.ndarray]:
    """(1-lam) * CE + lam * T^2 * KL(teacher_T || student_T), batch-mean.

    ``kd_weights`` optionally scales the imitation term per sample (the
    sample-mask hook); cross-entropy is never masked.
    """
    zs, zt, y = _check_batch(student_logits, teacher_logits, labels)
    n = zs.shape[0]
    lam, temp = cfg.lam, cfg.temperature

    ce, ce_grad = ce_loss(zs, y)
    if lam == 0.0:
        # Imitation disabled: identical to the CE-only baseline, teacher unused.
        return (1.0 - lam) * ce, (1.0 - lam) * ce_grad

    w = _kd_weights(kd_weights, n)
    t = softmax(zt, temp)
    s = softmax(zs, temp)
    kl_rows = np.sum(t * np.log(t / s), axis=1)
    kd = float(np.mean(w * kl_rows))
    # T^2 loss factor times the 1/T softmax Jacobian leaves a net factor T
    kd_grad = (temp / n) * w[:, None] * (s - t)

    loss = (1.0 - lam) * ce + lam * temp * temp * kd
    grad = (1.0 - lam) * ce_grad + lam * kd_grad
    return loss, grad


def decoupled_kd_loss(
    student_logits,
    teacher_logits,
    labels,
    cfg: KdLossConfig,
    kd_weights=None,
) -> tuple[float, np.ndarray]:
    """(1-lam) * CE + lam * T^2 * (alpha * TCKL + beta * NCKL), batch-mean.

    TCKL is the binary (target vs rest) KL and NCKL the KL of the
    renormalized non-target distributions, both per sample with k = true
    label; with alpha=1 and beta=p_notk the imitation term reassembles the
    full KL exactly.
    """
    zs, zt, y = _check_batch(student_logits, teacher_logits, labels)
    n, c = zs.shape
    lam, temp = cfg.lam, cfg.temperature
    alpha, beta = cfg.alpha, cfg.beta

    ce, ce_grad = ce_loss(zs, y)
    if lam == 0.0:
        return (1.0 - lam) * ce, (1.0 - lam) * ce_grad

    w = _kd_weights(kd_weights, n)
    t = softmax(zt, temp)
    s = softmax(zs, temp)
    rows = divergence_rows(t, s, y)
    kd = float(np.mean(w * (alpha * rows.tckl + beta * rows.nckl)))

    idx = np.arange(n)
    tk = t[idx, y]
    sk = s[idx, y]
    t_mass = rows.p_notk_teacher
    s_mass = np.sum(s, axis=1) - sk

    # dTCKL/ds_j = -tk/sk at j=k, -(t_mass/s_mass) elsewhere
    g_tckl = np.repeat((-t_mass / s_mass)[:, None], c, axis=1)
    g_tckl[idx, y] = -tk / sk

    # dNCKL/ds_j = -t_hat_j/s_j + 1/s_mass for j != k, 0 at j = k
    t_hat_full = t / t_mass[:, None]
    g_nckl = -t_hat_full / s + 1.0 / s_mass[:, None]
    g_nckl[idx, y] = 0.0

    g_probs = w[:, None] * (alpha * g_tckl + beta * g_nckl) / n
    kd_grad = _probs_to_logits_grad(s, g_probs, temp)

    loss = (1.0 - lam) * ce + lam * temp * temp * kd
    grad = (1.0 - lam) * ce_grad + lam * temp * temp * kd_grad
    return loss, grad


def kd_loss(student_logits, teacher_logits, labels, cfg: KdLossConfig, kd_weights=None):
    """Dispatch on ``cfg.mode``."""
    fn = vanilla_kd_loss if cfg.mode == "vanilla" else decoupled_kd_loss
    return fn(student_logits, teacher_logits, labels, cfg, kd_weights)
