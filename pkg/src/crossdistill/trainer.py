"""Teacher training, student distillation (with optional masking), evaluation,
and the capacity/strength parity checks.

All loops are single-threaded and deterministic: parameter init, epoch
shuffling, and any mask randomness draw from separate streams derived from
the config seed, so a lam=0 distillation reproduces the plain cross-entropy
run bit for bit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import ModalityPair
from .divergence import batch_report
from .losses import KdLossConfig, ce_loss, kd_loss
from .masking import (
    MaskPlan,
    TrainingFailure,
    apply_feature_mask,
    apply_sample_mask,
    build_feature_mask,
    sample_saliency,
)
from .nn import MlpParams, MlpSpec, SgdOptimizer, backward, forward, init_params, softmax
from .seeding import derive_seed

REPORT_CSV_HEADER = "epoch,loss,acc,tckl,nckl,tcjsd,ncjsd"


@dataclass(frozen=True)
class FeatureMaskSource:
    """Zero these teacher-input columns before every teacher inference."""

    plan: MaskPlan


@dataclass(frozen=True)
class SampleMaskSource:
    """Re-rank training samples by NCJSD each epoch and zero the KD weight of
    the top ``ratio`` fraction (their cross-entropy term is kept)."""

    mode: str = "true_mask"
    ratio: float = 0.0


@dataclass
class TrainConfig:
    spec: MlpSpec
    epochs: int = 40
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    kd: KdLossConfig = field(default_factory=KdLossConfig)
    mask: FeatureMaskSource | SampleMaskSource | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainReport:
    """Per-epoch curves plus the final test accuracy and wall time."""

    loss: np.ndarray
    acc: np.ndarray
    tckl: np.ndarray
    nckl: np.ndarray
    tcjsd: np.ndarray
    ncjsd: np.ndarray
    final_accuracy: float
    wall_time: float

    def tail_mean(self, column: str, window: int = 10) -> float:
        """Mean of a column over the last ``window`` epochs (divergence
        diagnostics are reported as this stable-phase average)."""
        values = getattr(self, column)
        return float(values[-min(window, len(values)) :].mean())

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(REPORT_CSV_HEADER + "\n")
            for e in range(len(self.loss)):
                cells = [str(e)] + [
                    repr(float(col[e]))
                    for col in (self.loss, self.acc, self.tckl, self.nckl, self.tcjsd, self.ncjsd)
                ]
                fh.write(",".join(cells) + "\n")


def evaluate(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax matches; argmax ties resolve to the lowest class."""
    pred = np.argmax(forward(params, x), axis=1)
    return float(np.mean(pred == np.asarray(y)))


def _epoch_batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.shape[0], batch_size):
        yield order[start : start + batch_size]


def train_teacher(
    data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    eval_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[MlpParams, TrainReport]:
    """Minimize cross-entropy (weight decay in the optimizer) on one modality."""
    x, y = data
    start_time = time.perf_counter()
    params = init_params(cfg.spec, cfg.seed)
    opt = SgdOptimizer(cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    n = x.shape[0]
    losses, accs = [], []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for idx in _epoch_batches(order, cfg.batch_size):
            loss, grad = ce_loss(forward(params, x[idx]), y[idx])
            if not np.isfinite(loss):
                raise TrainingFailure(f"non-finite loss at epoch {epoch}")
            params = opt.step(params, backward(params, x[idx], grad))
            total += loss * idx.shape[0]
        losses.append(total / n)
        accs.append(evaluate(params, *eval_data) if eval_data is not None else np.nan)
    nan = np.full(cfg.epochs, np.nan)
    report = TrainReport(
        np.array(losses),
        np.array(accs),
        nan.copy(),
        nan.copy(),
        nan.copy(),
        nan.copy(),
        final_accuracy=float(accs[-1]),
        wall_time=time.perf_counter() - start_time,
    )
    return params, report


def distill_student(
    pair: ModalityPair,
    teacher: MlpParams,
    cfg: TrainConfig,
    eval_pair: ModalityPair | None = None,
) -> tuple[MlpParams, TrainReport]:
    """Train a student on view b against labels and frozen-teacher soft targets.

    A configured feature mask zeroes teacher-input columns before inference;
    a configured sample mask recomputes per-sample NCJSD saliency every epoch
    and removes the imitation term of the top fraction. Per-epoch accuracy
    and teacher/student divergence diagnostics come from the held-out pair.
    """
    start_time = time.perf_counter()
    feature_plan = cfg.mask.plan if isinstance(cfg.mask, FeatureMaskSource) else None
    sample_mask = cfg.mask if isinstance(cfg.mask, SampleMaskSource) else None

    x_a = pair.x_a if feature_plan is None else apply_feature_mask(pair.x_a, feature_plan)
    x_b, y = pair.x_b, pair.y
    teacher_logits = forward(teacher, x_a)
    teacher_probs = softmax(teacher_logits)  # saliency uses plain softmax

    if eval_pair is not None:
        xa_eval = (
            eval_pair.x_a
            if feature_plan is None
            else apply_feature_mask(eval_pair.x_a, feature_plan)
        )
        teacher_logits_eval = forward(teacher, xa_eval)

    params = init_params(cfg.spec, cfg.seed)
    opt = SgdOptimizer(cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    n = x_b.shape[0]
    losses, accs = [], []
    div_cols: dict[str, list[float]] = {k: [] for k in ("tckl", "nckl", "tcjsd", "ncjsd")}

    for epoch in range(cfg.epochs):
        kd_weights = None
        if sample_mask is not None and cfg.kd.lam > 0.0:
            saliency = sample_saliency(teacher_probs, softmax(forward(params, x_b)), y)
            plan = build_feature_mask(
                saliency,
                sample_mask.mode,
                sample_mask.ratio,
                rng_seed=derive_seed(cfg.seed, "sample-mask", epoch),
            )
            kd_weights = apply_sample_mask(np.ones(n), plan)

        order = shuffle.permutation(n)
        total = 0.0
        for idx in _epoch_batches(order, cfg.batch_size):
            z_s = forward(params, x_b[idx])
            w = None if kd_weights is None else kd_weights[idx]
            loss, grad = kd_loss(z_s, teacher_logits[idx], y[idx], cfg.kd, w)
            if not np.isfinite(loss):
                raise TrainingFailure(f"non-finite loss at epoch {epoch}")
            params = opt.step(params, backward(params, x_b[idx], grad))
            total += loss * idx.shape[0]
        losses.append(total / n)

        if eval_pair is not None:
            student_logits_eval = forward(params, eval_pair.x_b)
            accs.append(
                float(np.mean(np.argmax(student_logits_eval, axis=1) == eval_pair.y))
            )
            rep = batch_report(teacher_logits_eval, student_logits_eval, eval_pair.y)
            for key in div_cols:
                div_cols[key].append(getattr(rep, key))
        else:
            accs.append(np.nan)
            for key in div_cols:
                div_cols[key].append(np.nan)

    report = TrainReport(
        np.array(losses),
        np.array(accs),
        np.array(div_cols["tckl"]),
        np.array(div_cols["nckl"]),
        np.array(div_cols["tcjsd"]),
        np.array(div_cols["ncjsd"]),
        final_accuracy=float(accs[-1]),
        wall_time=time.perf_counter() - start_time,
    )
    return params, report


@dataclass
class ParityReport:
    """Capacity (parameter-count) and strength (per-modality accuracy) checks."""

    capacity_ok: bool
    param_count_teacher: int
    param_count_student: int
    acc_a: list[float]
    acc_b: list[float]
    strength_gap: float
    strength_ok: bool
    tolerance: float


def check_assumptions(
    spec_t: MlpSpec,
    spec_s: MlpSpec,
    pair_train: ModalityPair,
    cfg: TrainConfig,
    pair_test: ModalityPair | None = None,
    seeds: list[int] | None = None,
    tolerance: float = 0.03,
) -> ParityReport:
    """Capacity: equal parameter counts. Strength: a fresh net per modality,
    seed-averaged |acc_a - acc_b| <= tolerance on the held-out pair."""
    count_t, count_s = spec_t.param_count(), spec_s.param_count()
    seeds = [cfg.seed] if seeds is None else seeds
    if pair_test is None:
        raise ValueError("pair_test is required for the strength check")
    acc_a, acc_b = [], []
    for seed in seeds:
        cfg_a = replace(cfg, spec=spec_t, seed=derive_seed(seed, "parity-a"))
        cfg_b = replace(cfg, spec=spec_s, seed=derive_seed(seed, "parity-b"))
        net_a, _ = train_teacher((pair_train.x_a, pair_train.y), cfg_a)
        net_b, _ = train_teacher((pair_train.x_b, pair_train.y), cfg_b)
        acc_a.append(evaluate(net_a, pair_test.x_a, pair_test.y))
        acc_b.append(evaluate(net_b, pair_test.x_b, pair_test.y))
    gap = abs(float(np.mean(acc_a)) - float(np.mean(acc_b)))
    return ParityReport(
        capacity_ok=count_t == count_s,
        param_count_teacher=count_t,
        param_count_student=count_s,
        acc_a=acc_a,
        acc_b=acc_b,
        strength_gap=gap,
        strength_ok=gap <= tolerance,
        tolerance=tolerance,
    )
