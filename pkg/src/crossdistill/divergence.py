"""Divergence machinery: KL, its target/non-target decomposition, and the
Jensen-Shannon diagnostics (TCJSD / NCJSD) used throughout the lab.

Conventions
-----------
* All logs are natural; probabilities are floored at ``PROB_EPS`` first.
* ``k`` is always the ground-truth class of the sample, never an argmax.
* "Non-target distribution" means the softmax output with class ``k``
  removed and the remaining C-1 entries renormalized to sum to 1.
* ``tckl`` is the KL of the binary (target vs rest) split, so that the
  decomposition identity ``kl_full = tckl + p_notk * nckl`` holds exactly.
  The single-term quantity ``p_k * ln(p_k/q_k)`` (used by the ratio
  estimator) is available as :func:`tckl_target_term`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn import PROB_EPS, softmax

RATIO_TCKL_FLOOR = 1e-15

REPORT_CSV_HEADER = "step,kl_full,tckl,nckl,p_notk,tcjsd,ncjsd,ratio"


@dataclass
class NonTargetDist:
    """Renormalized distribution over the C-1 classes other than ``target_index``."""

    probs: np.ndarray
    target_index: int
    degenerate: bool = False  # all non-target mass was at the clamp floor


@dataclass
class DivergenceReport:
    """Per-sample (or batch-mean) divergence summary between teacher and student."""

    kl_full: float
    tckl: float
    nckl: float
    p_notk_teacher: float
    tcjsd: float
    ncjsd: float
    ratio_nckl_tckl: float | None


class RatioEstimate(NamedTuple):
    exact: float | None
    taylor: float | None
    defined: bool


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0)


def _check_pair(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p, q = _clamp(p), _clamp(q)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; nonnegative up to clamp-level float noise."""
    p, q = _check_pair(p, q)
    return float(np.sum(p * np.log(p / q)))


def renormalize_nontarget(p: np.ndarray, k: int) -> NonTargetDist:
    """Drop class ``k`` and renormalize the rest to a proper distribution."""
    p = _clamp(p)
    c = p.shape[0]
    if c < 2:
        raise ValueError("need at least 2 classes")
    if not (0 <= k < c):
        raise ValueError(f"target index {k} out of range for {c} classes")
    rest = np.delete(p, k)
    total = rest.sum()
    degenerate = bool(total <= (c - 1) * PROB_EPS * (1.0 + 1e-9))
    return NonTargetDist(rest / total, int(k), degenerate)


def _split_rows(probs: np.ndarray, labels: np.ndarray):
    """Split (n, C) rows into target prob, non-target block, non-target mass."""
    n, c = probs.shape
    idx = np.arange(n)
    p_k = probs[idx, labels]
    mask = np.ones((n, c), dtype=bool)
    mask[idx, labels] = False
    rest = probs[mask].reshape(n, c - 1)
    mass = rest.sum(axis=1)
    return p_k, rest, mass


@dataclass
class DivergenceRows:
    """Vectorized per-sample divergence columns for a batch."""

    kl_full: np.ndarray
    tckl: np.ndarray
    nckl: np.ndarray
    p_notk_teacher: np.ndarray
    tcjsd: np.ndarray
    ncjsd: np.ndarray


def divergence_rows(
    teacher_probs: np.ndarray, student_probs: np.ndarray, labels: np.ndarray
) -> DivergenceRows:
    """All per-sample divergence metrics for (n, C) probability batches.

    ``labels`` supplies the target class k of each row.
    """
    pt = _clamp(np.atleast_2d(teacher_probs))
    ps = _clamp(np.atleast_2d(student_probs))
    if pt.shape != ps.shape:
        raise ValueError(f"shape mismatch: {pt.shape} vs {ps.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (pt.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match batch {pt.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= pt.shape[1]:
        raise ValueError("label out of class range")

    kl_full = np.sum(pt * np.log(pt / ps), axis=1)

    tk, t_rest, t_mass = _split_rows(pt, labels)
    sk, s_rest, s_mass = _split_rows(ps, labels)

    tckl = tk * np.log(tk / sk) + t_mass * np.log(t_mass / s_mass)

    t_hat = t_rest / t_mass[:, None]
    s_hat = s_rest / s_mass[:, None]
    nckl = np.sum(t_hat * np.log(t_hat / s_hat), axis=1)

    mk = 0.5 * (tk + sk)
    tcjsd = 0.5 * tk * np.log(tk / mk) + 0.5 * sk * np.log(sk / mk)

    m_hat = 0.5 * (t_hat + s_hat)
    ncjsd = 0.5 * np.sum(t_hat * np.log(t_hat / m_hat), axis=1) + 0.5 * np.sum(
        s_hat * np.log(s_hat / m_hat), axis=1
    )

    return DivergenceRows(kl_full, tckl, nckl, t_mass, tcjsd, ncjsd)


def _single(teacher: np.ndarray, student: np.ndarray, k: int) -> DivergenceRows:
    t = _clamp(teacher)
    if not (0 <= k < t.shape[0]):
        raise ValueError(f"target index {k} out of range for {t.shape[0]} classes")
    return divergence_rows(teacher[None, :], student[None, :], np.array([k]))


def decompose_kl(teacher: np.ndarray, student: np.ndarray, k: int) -> DivergenceReport:
    """Full KL plus its target/non-target decomposition for one pair.

    Satisfies ``kl_full == tckl + p_notk_teacher * nckl`` to float precision.
    ``ratio_nckl_tckl`` is ``nckl / tckl`` of the report's own fields, or
    None when |tckl| is below ``RATIO_TCKL_FLOOR``.
    """
    rows = _single(teacher, student, k)
    tckl = float(rows.tckl[0])
    nckl = float(rows.nckl[0])
    ratio = nckl / tckl if abs(tckl) >= RATIO_TCKL_FLOOR else None
    return DivergenceReport(
        kl_full=float(rows.kl_full[0]),
        tckl=tckl,
        nckl=nckl,
        p_notk_teacher=float(rows.p_notk_teacher[0]),
        tcjsd=float(rows.tcjsd[0]),
        ncjsd=float(rows.ncjsd[0]),
        ratio_nckl_tckl=ratio,
    )


def tcjsd(teacher: np.ndarray, student: np.ndarray, k: int) -> float:
    """Target-class Jensen-Shannon term, target coordinates only.

    This is deliberately not a full binary JSD: only the two target-class
    probabilities enter, each against their midpoint. See
    :func:`tcjsd_binary` for the complement-inclusive variant.
    """
    return float(_single(teacher, student, k).tcjsd[0])


def tcjsd_binary(teacher: np.ndarray, student: np.ndarray, k: int) -> float:
    """Full two-class JSD of the (target, rest) split; complement terms included."""
    t, s = _check_pair(teacher, student)
    if not (0 <= k < t.shape[0]):
        raise ValueError(f"target index {k} out of range for {t.shape[0]} classes")
    a = np.array([t[k], np.delete(t, k).sum()])
    b = np.array([s[k], np.delete(s, k).sum()])
    m = 0.5 * (a + b)
    return float(0.5 * np.sum(a * np.log(a / m)) + 0.5 * np.sum(b * np.log(b / m)))


def ncjsd(teacher: np.ndarray, student: np.ndarray, k: int) -> float:
    """JSD between the renormalized non-target distributions; in [0, ln 2]."""
    return float(_single(teacher, student, k).ncjsd[0])


def tckl_target_term(teacher: np.ndarray, student: np.ndarray, k: int) -> float:
    """The raw single-term target quantity p_k * ln(p_k / q_k)."""
    t, s = _check_pair(teacher, student)
    return float(t[k] * np.log(t[k] / s[k]))


def taylor_ratio_estimate(
    teacher: np.ndarray, student: np.ndarray, k: int
) -> RatioEstimate:
    """Exact and second-order-Taylor estimates of the NCKL/TCKL ratio.

    The student is treated as a small perturbation of the teacher. The exact
    ratio divides the non-target KL by the raw target term
    ``p_k * ln(p_k/q_k)``; the Taylor estimate expands both in the measured
    perturbations: eps_t on the target probability and eps_i on the
    renormalized non-target entries, giving
    ``(-sum eps_i + 1/2 sum eps_i^2 / p_hat_i) / (-eps_t)``.

    Returns an undefined flag instead of dividing when the target term is
    smaller than ``RATIO_TCKL_FLOOR`` in magnitude (e.g. zero perturbation).
    """
    t, s = _check_pair(teacher, student)
    if not (0 <= k < t.shape[0]):
        raise ValueError(f"target index {k} out of range for {t.shape[0]} classes")
    exact_tckl = float(t[k] * np.log(t[k] / s[k]))
    eps_t = float(s[k] - t[k])
    if abs(exact_tckl) < RATIO_TCKL_FLOOR or abs(eps_t) < RATIO_TCKL_FLOOR:
        return RatioEstimate(None, None, False)

    t_hat = renormalize_nontarget(t, k).probs
    s_hat = renormalize_nontarget(s, k).probs
    exact_nckl = float(np.sum(t_hat * np.log(t_hat / s_hat)))

    eps = s_hat - t_hat
    taylor_nckl = float(-np.sum(eps) + 0.5 * np.sum(eps * eps / t_hat))
    return RatioEstimate(exact_nckl / exact_tckl, taylor_nckl / (-eps_t), True)


def batch_report(
    teacher_logits: np.ndarray,
    student_logits: np.ndarray,
    labels: np.ndarray,
    temperature: float = 1.0,
) -> DivergenceReport:
    """Batch-mean divergence report from raw logits.

    Per-sample metrics use each sample's true label as the target class and
    are averaged arithmetically. The ratio field divides the mean NCKL by the
    mean TCKL (undefined flag when the latter is ~0); note that the
    per-sample decomposition identity does not survive plain averaging
    because ``p_notk * nckl`` is a product.
    """
    pt = softmax(teacher_logits, temperature)
    ps = softmax(student_logits, temperature)
    rows = divergence_rows(pt, ps, labels)
    mean_tckl = float(rows.tckl.mean())
    mean_nckl = float(rows.nckl.mean())
    ratio = mean_nckl / mean_tckl if abs(mean_tckl) >= RATIO_TCKL_FLOOR else None
    return DivergenceReport(
        kl_full=float(rows.kl_full.mean()),
        tckl=mean_tckl,
        nckl=mean_nckl,
        p_notk_teacher=float(rows.p_notk_teacher.mean()),
        tcjsd=float(rows.tcjsd.mean()),
        ncjsd=float(rows.ncjsd.mean()),
        ratio_nckl_tckl=ratio,
    )


def format_report_row(step: int, report: DivergenceReport) -> str:
    """One CSV row matching ``REPORT_CSV_HEADER``; undefined ratio -> empty cell."""
    ratio = "" if report.ratio_nckl_tckl is None else repr(report.ratio_nckl_tckl)
    fields = [
        str(step),
        repr(report.kl_full),
        repr(report.tckl),
        repr(report.nckl),
        repr(report.p_notk_teacher),
        repr(report.tcjsd),
        repr(report.ncjsd),
        ratio,
    ]
    return ",".join(fields)


def append_report_row(path, step: int, report: DivergenceReport) -> None:
    """Append a report row to ``path``, writing the header on first use."""
    import os

    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write(REPORT_CSV_HEADER + "\n")
        fh.write(format_report_row(step, report) + "\n")
