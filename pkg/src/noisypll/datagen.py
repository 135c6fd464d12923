"""Synthetic Gaussian-cluster datasets and candidate-set corruption."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


CLEAN, NOISY = "clean", "noisy"


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 5
    num_samples: int = 2000
    feature_dim: int = 2
    q: float = 0.3
    eta: float = 0.3
    class_separation: float = 3.0
    seed: int = 0
    train_frac: float = 0.8
    val_frac: float = 0.1

    def validate(self):
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.num_samples < self.num_classes:
            raise ConfigurationError("num_samples must be >= num_classes")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")
        if not 0 <= self.q <= 1 or not 0 <= self.eta <= 1:
            raise ConfigurationError("q and eta must lie in [0, 1]")
        if self.class_separation <= 0:
            raise ConfigurationError("class_separation must be positive")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac <= 1):
            raise ConfigurationError("split fractions must be positive and sum to at most 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        return self


@dataclass(frozen=True)
class PartialSample:
    features: np.ndarray
    true_label: int
    candidates: np.ndarray  # bool mask of length C

    @property
    def omega(self):
        return CLEAN if self.candidates[self.true_label] else NOISY

    @property
    def candidate_set(self):
        return set(np.flatnonzero(self.candidates).tolist())


class PartialDataset:
    """Column-oriented partially labelled data.

    ``candidates`` is an ``(n, C)`` boolean mask and is mutated in place by
    label correction; ``features`` and ``labels`` are read-only.
    """

    def __init__(self, features, labels, candidates, ids=None):
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.candidates = np.asarray(candidates, dtype=bool)
        self.ids = np.arange(len(self.labels)) if ids is None else np.asarray(ids, dtype=np.int64)
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return PartialSample(self.features[i], int(self.labels[i]), self.candidates[i].copy())

    @property
    def num_classes(self):
        return self.candidates.shape[1]

    @property
    def clean_mask(self):
        return self.candidates[np.arange(len(self)), self.labels]

    @property
    def noise_level(self):
        return float(1.0 - self.clean_mask.mean()) if len(self) else 0.0

    def copy(self):
        return PartialDataset(self.features.copy(), self.labels.copy(), self.candidates.copy(), self.ids.copy())

    @classmethod
    def concat(cls, parts):
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.candidates for p in parts]),
            np.concatenate([p.ids for p in parts]),
        )


@dataclass
class SplitDataset:
    train: PartialDataset
    validation: PartialDataset
    test: PartialDataset
    spec: DatasetSpec = None

    def copy(self):
        return replace(self, train=self.train.copy(), validation=self.validation.copy(), test=self.test.copy())

    @property
    def total(self):
        return len(self.train) + len(self.validation) + len(self.test)


def cluster_means(num_classes, feature_dim, separation):
    """Class means with the nearest pair exactly ``separation`` apart."""
    C, d = num_classes, feature_dim
    means = np.zeros((C, d))
    if d >= C:
        # scaled standard basis: pairwise distance sqrt(2) * r
        means[:, :C] = np.eye(C) * separation / math.sqrt(2)
    elif d == 1:
        means[:, 0] = separation * (np.arange(C) - (C - 1) / 2)
    else:
        radius = separation / (2 * math.sin(math.pi / C))
        angles = 2 * math.pi * np.arange(C) / C
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


def generate_gaussian_clusters(spec: DatasetSpec) -> SplitDataset:
    """Balanced isotropic unit-variance clusters with singleton candidate sets."""
    spec.validate()
    C, N, d = spec.num_classes, spec.num_samples, spec.feature_dim
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(N) % C)
    X = cluster_means(C, d, spec.class_separation)[labels] + rng.standard_normal((N, d))
    S = np.zeros((N, C), dtype=bool)
    S[np.arange(N), labels] = True

    n_train = int(round(spec.train_frac * N))
    n_val = min(int(round(spec.val_frac * N)), N - n_train)
    ids = np.arange(N)
    cuts = [0, n_train, n_train + n_val, N]
    parts = [
        PartialDataset(X[a:b], labels[a:b], S[a:b], ids[a:b]) for a, b in zip(cuts[:-1], cuts[1:])
    ]
    return SplitDataset(*parts, spec=spec)


def corrupt_candidates(labels, num_classes, q, eta, rng):
    """Candidate masks for singleton-labelled samples.

    Each incorrect label joins ``S`` with probability ``q``; afterwards each
    sample turns noisy with probability ``eta`` by swapping the true label for
    a uniformly chosen non-candidate.
    """
    if eta > 0 and q >= 1:
        raise ConfigurationError("eta > 0 with q = 1 leaves no non-candidate label to swap in")
    labels = np.asarray(labels)
    n, C = len(labels), num_classes
    rows = np.arange(n)
    S = rng.random((n, C)) < q
    S[rows, labels] = True
    noisy = rng.random(n) < eta
    # uniform choice among non-candidates via random keys
    keys = np.where(S, -1.0, rng.random((n, C)))
    pick = keys.argmax(axis=1)
    full = S.all(axis=1)
    if (noisy & full).any():
        log.debug("%d noisy draws hit a full candidate set and stay clean", int((noisy & full).sum()))
    swap = noisy & ~full
    S[rows[swap], pick[swap]] = True
    S[rows[swap], labels[swap]] = False
    return S


def corrupt(dataset: SplitDataset, q, eta, rng_seed) -> SplitDataset:
    """Corrupt the training split; validation and test stay singleton."""
    if not np.all(dataset.train.candidates.sum(axis=1) == 1):
        raise ConfigurationError("corrupt() expects singleton candidate sets")
    if not 0 <= q <= 1 or not 0 <= eta <= 1:
        raise ConfigurationError("q and eta must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    out = dataset.copy()
    train = out.train
    out.train = PartialDataset(
        train.features, train.labels, corrupt_candidates(train.labels, train.num_classes, q, eta, rng), train.ids
    )
    return out


def merge_validation(dataset: SplitDataset, q, eta, rng_seed) -> SplitDataset:
    """Corrupt the validation split and append it to the training split."""
    rng = np.random.default_rng(rng_seed)
    val = dataset.validation
    corrupted = PartialDataset(
        val.features, val.labels, corrupt_candidates(val.labels, val.num_classes, q, eta, rng), val.ids
    )
    out = dataset.copy()
    out.train = PartialDataset.concat([out.train, corrupted])
    return out


def make_dataset(spec: DatasetSpec) -> SplitDataset:
    """Generate and corrupt in one go; corruption uses a derived seed."""
    clean = generate_gaussian_clusters(spec)
    return corrupt(clean, spec.q, spec.eta, np.random.SeedSequence([spec.seed, 1]))


# Export format: a header line "# noisypll-dataset v1 num_classes=C feature_dim=d",
# then one tab-separated record per line with columns
#   split  id  label  candidates  omega  features
# candidates is the C-bit mask in hex (bit j set <=> label j in S), omega is
# "clean"/"noisy", features are comma-separated repr() floats (lossless).
EXPORT_MAGIC = "# noisypll-dataset v1"
SPLITS = ("train", "validation", "test")


def mask_to_hex(mask):
    return format(sum(1 << int(j) for j in np.flatnonzero(mask)), "x")


def hex_to_mask(text, num_classes):
    value = int(text, 16)
    if value >> num_classes:
        raise ValueError(f"candidate mask {text} exceeds {num_classes} labels")
    return np.array([(value >> j) & 1 for j in range(num_classes)], dtype=bool)


def dumps_dataset(dataset: SplitDataset) -> str:
    C = dataset.train.num_classes
    d = dataset.train.features.shape[1]
    lines = [f"{EXPORT_MAGIC} num_classes={C} feature_dim={d}"]
    for name in SPLITS:
        part = getattr(dataset, name)
        omega = np.where(part.clean_mask, CLEAN, NOISY)
        for i in range(len(part)):
            feats = ",".join(repr(float(v)) for v in part.features[i])
            lines.append(
                f"{name}\t{part.ids[i]}\t{part.labels[i]}\t{mask_to_hex(part.candidates[i])}\t{omega[i]}\t{feats}"
            )
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> SplitDataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(EXPORT_MAGIC):
        raise ValueError("missing dataset header")
    meta = dict(tok.split("=") for tok in lines[0][len(EXPORT_MAGIC) :].split())
    C, d = int(meta["num_classes"]), int(meta["feature_dim"])
    rows = {name: ([], [], [], []) for name in SPLITS}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        split, sid, label, mask, omega, feats = line.split("\t")
        S = hex_to_mask(mask, C)
        label = int(label)
        if (omega == CLEAN) != bool(S[label]):
            raise ValueError(f"line {lineno}: omega flag disagrees with candidate mask")
        x = [float(v) for v in feats.split(",")]
        if len(x) != d:
            raise ValueError(f"line {lineno}: expected {d} features")
        bucket = rows[split]
        bucket[0].append(x)
        bucket[1].append(label)
        bucket[2].append(S)
        bucket[3].append(int(sid))

    def build(bucket):
        X, y, S, ids = bucket
        return PartialDataset(
            np.array(X, dtype=float).reshape(-1, d),
            np.array(y, dtype=np.int64),
            np.array(S, dtype=bool).reshape(-1, C),
            np.array(ids, dtype=np.int64),
        )

    return SplitDataset(*(build(rows[name]) for name in SPLITS))
