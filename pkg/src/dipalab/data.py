"""Synthetic long-tailed crop-like time series, splits, and k-shot episodes.

Each class owns a smooth seasonal prototype per channel (two sinusoids
over the day of year). A sample picks a sorted set of distinct days and
reads the prototype there, plus Gaussian noise. One head class takes a
fixed share of all samples; the rest follow a power law over rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DAYS_PER_YEAR = 366
FORMAT_TAG = "DIPA-DATASET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TimeSeriesSample:
    values: np.ndarray  # (n_t, d)
    days: np.ndarray  # (n_t,) strictly increasing, in [0, 366)
    label: int
    uid: int = -1

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.days.shape[0]:
            raise ValueError("values must be (n_t, d) with one day per row")
        if self.days.shape[0] < 1:
            raise ValueError("a sample needs at least one observation")
        if np.any(np.diff(self.days) <= 0):
            raise ValueError("days must be strictly increasing")
        if self.days[0] < 0 or self.days[-1] >= DAYS_PER_YEAR:
            raise ValueError(f"days must lie in [0, {DAYS_PER_YEAR})")


@dataclass(frozen=True)
class GeneratorConfig:
    num_classes: int = 12
    head_class_fraction: float = 0.46
    tail_exponent: float = 1.0
    channels: int = 13
    obs_count_range: tuple[int, int] = (8, 20)
    noise_scale: float = 1.5
    test_only_classes: int = 2
    total_samples: int = 15000
    seed: int = 0
    # prototypes come from prototype_seed (defaults to seed); jitter perturbs
    # them, which gives a related-but-shifted source domain for pretraining
    prototype_seed: int | None = None
    prototype_jitter: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 < self.head_class_fraction < 1.0:
            raise ValueError("head_class_fraction must lie in (0, 1)")
        if self.tail_exponent <= 0:
            raise ValueError("tail_exponent must be positive")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        lo, hi = self.obs_count_range
        if not 1 <= lo <= hi <= DAYS_PER_YEAR:
            raise ValueError(f"obs_count_range must satisfy 1 <= min <= max <= {DAYS_PER_YEAR}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0 <= self.test_only_classes < self.num_classes - 1:
            raise ValueError("test_only_classes must leave the head class and at least one tail class trainable")
        if self.total_samples < self.num_classes:
            raise ValueError("total_samples must be at least num_classes")

    def class_probabilities(self) -> np.ndarray:
        ranks = np.arange(1, self.num_classes, dtype=np.float64)
        tail = ranks ** -self.tail_exponent
        tail *= (1.0 - self.head_class_fraction) / tail.sum()
        return np.concatenate([[self.head_class_fraction], tail])

    def class_counts(self) -> np.ndarray:
        """Per-class sample counts: at least one each, rest by largest remainder."""
        probs = self.class_probabilities()
        spare = self.total_samples - self.num_classes
        if spare == 0:
            return np.ones(self.num_classes, dtype=np.int64)
        exact = probs * self.total_samples - 1.0
        exact = np.clip(exact, 0.0, None)
        exact *= spare / exact.sum()
        counts = np.floor(exact).astype(np.int64)
        remainder = spare - counts.sum()
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:remainder]] += 1
        return counts + 1

    def source_domain(self, seed: int | None = None, total_samples: int | None = None) -> "GeneratorConfig":
        """A shifted sibling domain sharing this config's prototype family."""
        return replace(
            self,
            seed=(self.seed + 7919) if seed is None else seed,
            prototype_seed=self.prototype_seed if self.prototype_seed is not None else self.seed,
            prototype_jitter=max(self.prototype_jitter, 0.15),
            total_samples=self.total_samples if total_samples is None else total_samples,
            test_only_classes=0,
        )


@dataclass
class Dataset:
    samples: list[TimeSeriesSample]
    num_classes: int
    channels: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [f"class{c:02d}" for c in range(self.num_classes)]

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.intp)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels(), minlength=self.num_classes)


@dataclass
class SplitDataset:
    train: list[TimeSeriesSample]
    validation: list[TimeSeriesSample]
    test: list[TimeSeriesSample]
    num_classes: int
    channels: int
    test_only: tuple[int, ...] = ()
    class_names: list[str] = field(default_factory=list)

    def inventory(self, part: str) -> np.ndarray:
        labels = [s.label for s in getattr(self, part)]
        return np.bincount(np.asarray(labels, dtype=np.intp), minlength=self.num_classes)


def class_prototypes(cfg: GeneratorConfig) -> dict[str, np.ndarray]:
    """Per-class, per-channel sinusoid coefficients."""
    seed = cfg.seed if cfg.prototype_seed is None else cfg.prototype_seed
    rng = np.random.default_rng([seed, 0xC0FFEE])
    k, d = cfg.num_classes, cfg.channels
    # shared per-channel seasonal shape, with class-specific departures, so
    # classes overlap the way crop phenologies do
    base_phase = rng.uniform(0, 2 * math.pi, size=(1, d))
    proto = {
        "offset": rng.normal(0.0, 0.5, size=(k, d)),
        "amp1": rng.uniform(0.5, 1.5, size=(k, d)),
        "phase1": base_phase + rng.normal(0.0, 0.8, size=(k, d)),
        "amp2": rng.uniform(0.0, 0.6, size=(k, d)),
        "phase2": rng.uniform(0, 2 * math.pi, size=(k, d)),
    }
    if cfg.prototype_jitter > 0:
        jrng = np.random.default_rng([cfg.seed, 0xBEEF])
        for key in proto:
            proto[key] = proto[key] + cfg.prototype_jitter * jrng.normal(size=(k, d))
    return proto


def evaluate_prototype(proto: dict[str, np.ndarray], label: int, days: np.ndarray) -> np.ndarray:
    t = 2.0 * math.pi * days[:, None] / 365.0
    return (
        proto["offset"][label]
        + proto["amp1"][label] * np.sin(t + proto["phase1"][label])
        + proto["amp2"][label] * np.sin(2.0 * t + proto["phase2"][label])
    )


def generate(cfg: GeneratorConfig) -> Dataset:
    proto = class_prototypes(cfg)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    counts = cfg.class_counts()
    labels = np.repeat(np.arange(cfg.num_classes), counts)
    rng.shuffle(labels)
    lo, hi = cfg.obs_count_range
    samples = []
    for uid, y in enumerate(labels):
        n_t = int(rng.integers(lo, hi + 1))
        days = np.sort(rng.choice(DAYS_PER_YEAR, size=n_t, replace=False))
        values = evaluate_prototype(proto, int(y), days)
        if cfg.noise_scale > 0:
            values = values + cfg.noise_scale * rng.standard_normal(values.shape)
        samples.append(TimeSeriesSample(values, days.astype(np.intp), int(y), uid))
    return Dataset(samples, cfg.num_classes, cfg.channels)


def choose_test_only(counts: np.ndarray, n: int, rng: np.random.Generator, head: int = 0) -> tuple[int, ...]:
    """Pick ``n`` zero-shot classes among the rarer half of the tail."""
    if n == 0:
        return ()
    tail = [c for c in np.argsort(counts, kind="stable") if c != head and counts[c] > 0]
    pool = tail[: max(n, len(tail) // 2)]
    return tuple(sorted(int(c) for c in rng.choice(pool, size=n, replace=False)))


def split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    test_only: int = 0,
    rng: np.random.Generator | None = None,
) -> SplitDataset:
    """Random sample-level partition; designated zero-shot classes go entirely to test."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    if not 0 <= test_only < dataset.num_classes:
        raise ValueError("test_only must be smaller than num_classes")
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(dataset)
    zero_shot = choose_test_only(dataset.class_counts(), test_only, rng)
    labels = dataset.labels()
    forced = np.flatnonzero(np.isin(labels, zero_shot))
    free = np.flatnonzero(~np.isin(labels, zero_shot))
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if forced.size > n_test:
        raise ValueError("zero-shot classes hold more samples than the test split can take")
    free = free[rng.permutation(free.size)]
    train_idx = free[:n_train]
    val_idx = free[n_train:n_train + n_val]
    test_idx = np.sort(np.concatenate([free[n_train + n_val:], forced]))
    pick = lambda idx: [dataset.samples[i] for i in np.sort(idx)]
    return SplitDataset(
        train=pick(train_idx),
        validation=pick(val_idx),
        test=pick(test_idx),
        num_classes=dataset.num_classes,
        channels=dataset.channels,
        test_only=zero_shot,
        class_names=list(dataset.class_names),
    )


def sample_few_shot(train: list[TimeSeriesSample], k: int, rng: np.random.Generator) -> list[TimeSeriesSample]:
    """min(k, available) samples per class, drawn without replacement."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not train:
        raise ValueError("empty train split")
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(train):
        by_class.setdefault(s.label, []).append(i)
    episode = []
    for c in sorted(by_class):
        idx = by_class[c]
        take = min(k, len(idx))
        episode.extend(train[i] for i in np.sort(rng.choice(idx, size=take, replace=False)))
    return episode


def validation_subset(validation: list[TimeSeriesSample], n: int, seed: int = 0) -> list[TimeSeriesSample]:
    """A fixed random subsample of at most ``n`` validation points."""
    if n >= len(validation):
        return list(validation)
    rng = np.random.default_rng([seed, 0x7A1])
    return [validation[i] for i in np.sort(rng.choice(len(validation), size=n, replace=False))]


# ---------------------------------------------------------------------------
# dataset files
#
#   line 1   DIPA-DATASET <version>
#   line 2   channels <d>
#   line 3   classes <K>
#   line 4   names <name_0> ... <name_{K-1}>
#   line 5   samples <N>
#   then N records, one per line, whitespace separated:
#            <label> <n_t> then n_t groups of <day> <v_1> ... <v_d>
# Values are written with repr() so they parse back bit-exactly. Blank
# lines and lines starting with '#' are ignored.


class DatasetFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


def write_dataset(path, samples: list[TimeSeriesSample], num_classes: int, channels: int, class_names=None) -> None:
    names = list(class_names) if class_names else [f"class{c:02d}" for c in range(num_classes)]
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION}",
        f"channels {channels}",
        f"classes {num_classes}",
        "names " + " ".join(names),
        f"samples {len(samples)}",
    ]
    for s in samples:
        parts = [str(s.label), str(len(s.days))]
        for day, row in zip(s.days, s.values):
            parts.append(str(int(day)))
            parts.extend(repr(float(v)) for v in row)
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path, uid_start: int = 0) -> Dataset:
    path = Path(path)
    rows = [
        (i + 1, line.split())
        for i, line in enumerate(path.read_text().splitlines())
        if line.strip() and not line.lstrip().startswith("#")
    ]

    def header(pos: int, key: str) -> list[str]:
        if pos >= len(rows):
            raise DatasetFormatError(path, rows[-1][0] if rows else 0, f"missing '{key}' header")
        lineno, toks = rows[pos]
        if not toks or toks[0] != key:
            raise DatasetFormatError(path, lineno, f"expected '{key}' header")
        return toks[1:]

    def as_int(tok: str, lineno: int, what: str) -> int:
        try:
            return int(tok)
        except ValueError:
            raise DatasetFormatError(path, lineno, f"{what} is not an integer: {tok!r}") from None

    lineno0 = rows[0][0] if rows else 1
    tag = header(0, FORMAT_TAG)
    if tag != [str(FORMAT_VERSION)]:
        raise DatasetFormatError(path, lineno0, f"unsupported version {' '.join(tag)!r}")
    d = as_int(header(1, "channels")[0], rows[1][0], "channels")
    k = as_int(header(2, "classes")[0], rows[2][0], "classes")
    names = header(3, "names")
    if len(names) != k:
        raise DatasetFormatError(path, rows[3][0], f"expected {k} class names, got {len(names)}")
    n = as_int(header(4, "samples")[0], rows[4][0], "samples")
    records = rows[5:]
    if len(records) != n:
        at = records[-1][0] if records else rows[4][0]
        raise DatasetFormatError(path, at, f"header declares {n} samples, found {len(records)}")
    samples = []
    for j, (lineno, toks) in enumerate(records):
        if len(toks) < 2:
            raise DatasetFormatError(path, lineno, "record needs label and n_t")
        label = as_int(toks[0], lineno, "label")
        n_t = as_int(toks[1], lineno, "n_t")
        if not 0 <= label < k:
            raise DatasetFormatError(path, lineno, f"label {label} outside [0, {k})")
        if n_t < 1:
            raise DatasetFormatError(path, lineno, "n_t must be >= 1")
        if len(toks) != 2 + n_t * (d + 1):
            raise DatasetFormatError(path, lineno, f"expected {2 + n_t * (d + 1)} fields, got {len(toks)}")
        try:
            grid = np.array(toks[2:], dtype=np.float64).reshape(n_t, d + 1)
        except ValueError:
            raise DatasetFormatError(path, lineno, "non-numeric observation field") from None
        days = grid[:, 0]
        if np.any(days != np.round(days)):
            raise DatasetFormatError(path, lineno, "day indices must be integers")
        try:
            samples.append(TimeSeriesSample(grid[:, 1:].copy(), days.astype(np.intp), label, uid_start + j))
        except ValueError as exc:
            raise DatasetFormatError(path, lineno, str(exc)) from None
    return Dataset(samples, k, d, names)


def write_split(directory, split_data: SplitDataset) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for part in ("train", "validation", "test"):
        paths[part] = directory / f"{part}.txt"
        write_dataset(paths[part], getattr(split_data, part), split_data.num_classes,
                      split_data.channels, split_data.class_names)
    return paths


def read_split(directory) -> SplitDataset:
    directory = Path(directory)
    parts = {}
    offset = 0
    for part in ("train", "validation", "test"):
        ds = read_dataset(directory / f"{part}.txt", uid_start=offset)
        offset += len(ds)
        parts[part] = ds
    tr = parts["train"]
    for part in ("validation", "test"):
        if (parts[part].num_classes, parts[part].channels) != (tr.num_classes, tr.channels):
            raise ValueError(f"{directory}: {part} header disagrees with train header")
    train_classes = set(tr.labels().tolist())
    val_classes = set(parts["validation"].labels().tolist())
    zero_shot = tuple(sorted(set(parts["test"].labels().tolist()) - train_classes - val_classes))
    return SplitDataset(tr.samples, parts["validation"].samples, parts["test"].samples,
                        tr.num_classes, tr.channels, zero_shot, tr.class_names)
