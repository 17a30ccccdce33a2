"""Synthetic two-modality classification data with a controllable domain gap.

A base dataset carries ``2*d_b`` decisive columns (class centroids sit on
hypercube vertices, one unit of Gaussian noise per sample). Two views are
cut from it: view b keeps the first ``d_b`` decisive columns; view a keeps
``d_t`` of those plus ``d_a - d_b`` columns view b never sees, where
``d_a + d_t = 2*d_b``. The gap ratio ``gamma = (d_a - d_b) / d_b`` moves the
views from identical (0) to sharing no decisive columns (1). Both views are
padded with pure-noise columns up to ``d_total`` and always keep exactly
``d_b`` decisive columns, so their standalone classification strength
matches by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SHARED = "shared-decisive"
EXCLUSIVE = "exclusive-decisive"
NOISE = "noise"


@dataclass(frozen=True)
class GenConfig:
    """Generator settings. ``d_decisive`` is the base block (= 2 * d_b)."""

    n_samples: int = 6000
    n_classes: int = 10
    d_decisive: int = 16
    d_total: int = 24
    class_sep: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.d_decisive < 1 or self.d_total < self.d_decisive // 2:
            raise ValueError(
                f"bad dims: d_decisive={self.d_decisive}, d_total={self.d_total}"
            )
        if self.n_samples // self.n_classes < 2:
            raise ValueError("need at least 2 samples per class")
        if self.class_sep < 0.0:
            raise ValueError("class_sep must be nonnegative")
        if self.d_decisive < 63 and self.n_classes > 2**self.d_decisive:
            raise ValueError(
                f"{self.n_classes} classes need distinct vertices of a "
                f"{self.d_decisive}-cube (only {2 ** self.d_decisive} exist)"
            )


@dataclass
class LabeledDataset:
    """Decisive feature block plus integer labels."""

    x: np.ndarray
    y: np.ndarray


@dataclass
class ModalityPair:
    """Aligned per-sample views with provenance for every column."""

    x_a: np.ndarray
    x_b: np.ndarray
    y: np.ndarray
    gamma: float
    column_map: dict[str, list[str]]
    d_a: int
    d_b: int
    d_t: int

    @property
    def n_samples(self) -> int:
        return self.y.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1

    def subset(self, indices: np.ndarray) -> "ModalityPair":
        return ModalityPair(
            self.x_a[indices],
            self.x_b[indices],
            self.y[indices],
            self.gamma,
            self.column_map,
            self.d_a,
            self.d_b,
            self.d_t,
        )


def _view_windows(dim: int) -> list[np.ndarray]:
    """Column windows a view can end up with: {0..d_t} + {d_b..d_a}.

    Only defined for the even-dim (2*d_b) base layout; covers every gamma a
    later split may choose, plus both pure halves.
    """
    d_b = dim // 2
    windows = []
    for d_a in range(d_b, 2 * d_b + 1):
        d_t = 2 * d_b - d_a
        windows.append(np.concatenate([np.arange(d_t), np.arange(d_b, d_a)]))
    return windows


def _random_distinct_bits(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct bit rows; each column splits the classes as evenly as it can."""
    for _ in range(64):
        cols = []
        for _ in range(dim):
            col = np.zeros(n_classes, dtype=np.int64)
            col[: n_classes // 2] = 1
            rng.shuffle(col)
            cols.append(col)
        bits = np.stack(cols, axis=1)
        if len({row.tobytes() for row in bits}) == n_classes:
            return bits
    # tiny cubes (e.g. C close to 2**dim): fall back to rejection sampling
    seen: set[bytes] = set()
    picks = []
    while len(picks) < n_classes:
        row = rng.integers(0, 2, size=dim)
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            picks.append(row)
    return np.array(picks)


def _distance_profile(n_classes: int, window: int) -> np.ndarray:
    """Target multiset of pairwise Hamming distances inside one window.

    Quantiles of the distance distribution induced by balanced random
    columns: a natural spread that keeps a couple of genuinely confusable
    class pairs per window without collisions.
    """
    from scipy.stats import binom

    n_pairs = n_classes * (n_classes - 1) // 2
    lo = (n_classes // 2) * ((n_classes + 1) // 2)
    p = lo / n_pairs  # per-column disagreement rate of a balanced split
    q = (np.arange(n_pairs) + 0.5) / n_pairs
    profile = binom.ppf(q, window, p)
    return np.maximum(profile, 1.0)


def _pair_distances(bits: np.ndarray, cols: np.ndarray) -> np.ndarray:
    sub = bits[:, cols]
    return np.sum(sub[:, None, :] != sub[None, :, :], axis=2).astype(np.float64)


def _profile_penalty(dist: np.ndarray, profile: np.ndarray) -> float:
    iu = np.triu_indices(dist.shape[0], k=1)
    return float(np.sum((np.sort(dist[iu]) - profile) ** 2))


def _distinct_vertices(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct +/-1 vertex patterns whose difficulty is even across views.

    A uniform draw lets the class geometry vary wildly between the column
    windows different modality splits select, which skews per-view strength
    and drowns gap effects in window luck. Starting from a balanced random
    draw, a seeded greedy bit-flip search pushes the sorted pairwise-distance
    profile of every selectable window toward one shared natural profile:
    each view ends up equally hard overall, but with its own confusable
    class pairs.
    """
    bits = _random_distinct_bits(n_classes, dim, rng)
    if dim % 2 != 0 or n_classes >= 2**dim or n_classes < 3:
        return 2.0 * bits - 1.0

    windows = _view_windows(dim)
    in_window = [[w for w, cols in enumerate(windows) if j in cols] for j in range(dim)]
    profile = _distance_profile(n_classes, dim // 2)
    dists = [_pair_distances(bits, cols) for cols in windows]
    scores = [_profile_penalty(d, profile) for d in dists]
    keys = {row.tobytes() for row in bits}

    for _ in range(300 * dim):
        c = int(rng.integers(n_classes))
        j = int(rng.integers(dim))
        agree = bits[:, j] == bits[c, j]  # distance to these rows grows on flip
        step = np.where(agree, 1.0, -1.0)
        step[c] = 0.0
        new_scores = {}
        delta = 0.0
        for w in in_window[j]:
            trial = dists[w].copy()
            trial[c, :] += step
            trial[:, c] += step
            new_scores[w] = _profile_penalty(trial, profile)
            delta += new_scores[w] - scores[w]
        if delta >= 0.0:
            continue
        old_key = bits[c].tobytes()
        bits[c, j] ^= 1
        new_key = bits[c].tobytes()
        if new_key in keys:
            bits[c, j] ^= 1
            continue
        keys.discard(old_key)
        keys.add(new_key)
        for w in in_window[j]:
            dists[w][c, :] += step
            dists[w][:, c] += step
            scores[w] = new_scores[w]
    return 2.0 * bits - 1.0


def generate_base(config: GenConfig) -> LabeledDataset:
    """Class centroids on distinct hypercube vertices + unit Gaussian noise.

    Labels are balanced within +/-1 and shuffled; everything is a pure
    function of the config (including its seed).
    """
    rng = np.random.default_rng(config.rng_seed)
    centroids = config.class_sep * _distinct_vertices(
        config.n_classes, config.d_decisive, rng
    )
    counts = [
        config.n_samples // config.n_classes + (1 if c < config.n_samples % config.n_classes else 0)
        for c in range(config.n_classes)
    ]
    y = np.repeat(np.arange(config.n_classes), counts)
    rng.shuffle(y)
    x = centroids[y] + rng.standard_normal((config.n_samples, config.d_decisive))
    return LabeledDataset(x, y)


def split_modalities(
    base: LabeledDataset,
    gamma: float,
    d_total: int,
    rng_seed: int,
    shared_noise: bool = False,
) -> ModalityPair:
    """Cut two views with gap ratio ``gamma`` from a base dataset.

    The base must carry an even decisive block of 2*d_b columns so that view
    a can draw columns up to index d_a <= 2*d_b. Noise padding is drawn
    independently per view unless ``shared_noise``; padding shapes do not
    depend on gamma, so view b is bit-identical across gamma for a fixed
    (base, rng_seed).
    """
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    n, d2 = base.x.shape
    if d2 % 2 != 0:
        raise ValueError(f"base decisive block must be even (2*d_b), got {d2}")
    d_b = d2 // 2
    d_a = int(np.floor(d_b * (1.0 + gamma) + 0.5))
    d_t = 2 * d_b - d_a
    if d_total < d_a:
        raise ValueError(f"d_total={d_total} < d_a={d_a}")
    pad = d_total - d_b

    rng = np.random.default_rng(rng_seed)
    noise_a = rng.standard_normal((n, pad))
    noise_b = noise_a if shared_noise else rng.standard_normal((n, pad))

    x_b = np.hstack([base.x[:, :d_b], noise_b])
    x_a = np.hstack([base.x[:, :d_t], base.x[:, d_b:d_a], noise_a])
    column_map = {
        "a": [SHARED] * d_t + [EXCLUSIVE] * (d_a - d_b) + [NOISE] * pad,
        "b": [SHARED] * d_t + [EXCLUSIVE] * (d_b - d_t) + [NOISE] * pad,
    }
    realized = (d_a - d_b) / d_b
    return ModalityPair(x_a, x_b, base.y.copy(), realized, column_map, d_a, d_b, d_t)


def make_pair(
    config: GenConfig,
    gamma: float,
    base_seed: int | None = None,
    split_seed: int | None = None,
    shared_noise: bool = False,
) -> ModalityPair:
    """Generate base + split in one call; seeds default to the config seed."""
    base_seed = config.rng_seed if base_seed is None else base_seed
    split_seed = config.rng_seed + 1 if split_seed is None else split_seed
    base = generate_base(replace(config, rng_seed=base_seed))
    return split_modalities(base, gamma, config.d_total, split_seed, shared_noise)


def train_test_split(
    pair: ModalityPair, test_fraction: float, rng_seed: int
) -> tuple[ModalityPair, ModalityPair]:
    """Stratified, deterministic split; every class lands on both sides."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(rng_seed)
    test_idx = []
    for c in range(pair.n_classes):
        members = np.flatnonzero(pair.y == c)
        if members.size < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        order = rng.permutation(members)
        n_test = int(np.floor(test_fraction * members.size + 0.5))
        n_test = min(max(n_test, 1), members.size - 1)
        test_idx.append(order[:n_test])
    test_idx = np.sort(np.concatenate(test_idx))
    in_test = np.zeros(pair.n_samples, dtype=bool)
    in_test[test_idx] = True
    train_idx = np.flatnonzero(~in_test)
    return pair.subset(train_idx), pair.subset(test_idx)


def write_pair_csv(pair: ModalityPair, path) -> None:
    """Rows ``y,a_0..a_{d-1},b_0..b_{d-1}``, floats in round-trip repr."""
    d = pair.x_a.shape[1]
    header = (
        ["y"] + [f"a_{i}" for i in range(d)] + [f"b_{i}" for i in range(d)]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for label, row_a, row_b in zip(pair.y, pair.x_a, pair.x_b):
            cells = [str(int(label))]
            cells += [repr(float(v)) for v in row_a]
            cells += [repr(float(v)) for v in row_b]
            fh.write(",".join(cells) + "\n")


def write_column_map_csv(pair: ModalityPair, path) -> None:
    """Sidecar ``view,index,provenance`` describing every column of each view."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("view,index,provenance\n")
        for view in ("a", "b"):
            for i, kind in enumerate(pair.column_map[view]):
                fh.write(f"{view},{i},{kind}\n")
