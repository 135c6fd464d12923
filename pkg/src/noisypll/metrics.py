"""Evaluation quantities computed between epochs.

Functions take class-probability arrays rather than models so that any
predictor (trained network, oracle posterior, random scores) can be scored.
Undefined values (empty subsets) are ``None`` and serialise as ``NA``.
"""
from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

UNDEFINED = "NA"
DEFAULT_BINS = 100


def margin_batch(probs, candidates):
    """Top candidate probability minus top non-candidate probability."""
    S = np.asarray(candidates, dtype=bool)
    inside = np.where(S, probs, -np.inf).max(axis=-1)
    outside = np.where(S, -np.inf, probs).max(axis=-1)
    return inside - outside


def hit_accuracy(data, probs):
    """``(phi_c, phi_n)``: top-candidate hits on clean samples and
    top-non-candidate hits on noisy samples.  ``None`` for an empty subset.
    """
    S = data.candidates
    y = data.labels
    clean = data.clean_mask
    cand_arg = np.where(S, probs, -np.inf).argmax(axis=1)
    non_arg = np.where(S, -np.inf, probs).argmax(axis=1)
    phi_c = float(np.mean(cand_arg[clean] == y[clean])) if clean.any() else None
    noisy = ~clean
    phi_n = float(np.mean(non_arg[noisy] == y[noisy])) if noisy.any() else None
    return phi_c, phi_n


def random_guess_hit_rate(num_classes, q):
    """Hit rate of a uniform guess among non-candidates, using the mean
    candidate-set size ``1 + (C - 1) q``."""
    return 1.0 / (num_classes - (1 + (num_classes - 1) * q))


def accuracy(labels, probs):
    if len(labels) == 0:
        return None
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def transductive_accuracy(train, probs):
    """Agreement of the unrestricted argmax with the hidden true label."""
    return accuracy(train.labels, probs)


@dataclass
class TauHistogram:
    bin_edges: np.ndarray
    counts_clean: np.ndarray
    counts_noisy: np.ndarray

    @classmethod
    def from_margins(cls, margins, clean_mask, bins=DEFAULT_BINS):
        edges = np.linspace(-1.0, 1.0, bins + 1)
        margins = np.clip(margins, -1.0, 1.0)
        clean_mask = np.asarray(clean_mask, dtype=bool)
        cc, _ = np.histogram(margins[clean_mask], bins=edges)
        cn, _ = np.histogram(margins[~clean_mask], bins=edges)
        return cls(edges, cc.astype(np.int64), cn.astype(np.int64))

    @property
    def bin_width(self):
        return float(self.bin_edges[1] - self.bin_edges[0])


def bayes_error(hist: TauHistogram):
    """Histogram Bayes error with equal priors.

    Per bin the error is ``0.5 * min(p(tau|clean), p(tau|noisy)) * width``;
    the densities are ``counts / (n * width)`` so widths cancel.  The sum is
    done in integers, ``sum min(c1 n2, c2 n1) / (2 n1 n2)``, so the result is
    the correctly rounded value of the exact rational.
    """
    c1 = hist.counts_clean.astype(object)
    c2 = hist.counts_noisy.astype(object)
    n1, n2 = int(sum(c1)), int(sum(c2))
    if n1 == 0 or n2 == 0:
        return None
    numer = sum(min(a * n2, b * n1) for a, b in zip(c1, c2))
    return numer / (2 * n1 * n2)


@dataclass
class MetricsRecord:
    epoch: int
    train_noise_level: float
    phi_c: float | None
    phi_n: float | None
    val_acc: float | None
    test_acc: float | None
    transductive_acc: float | None
    bayes_error: float | None
    num_corrections: int = 0
    phase: str = "warmup"


CSV_COLUMNS = (
    "epoch",
    "train_noise_level",
    "phi_c",
    "phi_n",
    "val_acc",
    "test_acc",
    "transductive_acc",
    "bayes_error",
)


def evaluate_epoch(epoch, clf, dataset, bins=DEFAULT_BINS, num_corrections=0, phase="warmup"):
    train = dataset.train
    p_train = clf.predict_proba(train.features)
    phi_c, phi_n = hit_accuracy(train, p_train)
    clean = train.clean_mask
    # margin is undefined for full candidate sets; leave them out of the histogram
    ok = ~train.candidates.all(axis=1)
    hist = TauHistogram.from_margins(margin_batch(p_train[ok], train.candidates[ok]), clean[ok], bins)
    val = dataset.validation
    test = dataset.test
    return MetricsRecord(
        epoch=epoch,
        train_noise_level=train.noise_level,
        phi_c=phi_c,
        phi_n=phi_n,
        val_acc=accuracy(val.labels, clf.predict_proba(val.features)) if len(val) else None,
        test_acc=accuracy(test.labels, clf.predict_proba(test.features)) if len(test) else None,
        transductive_acc=transductive_accuracy(train, p_train),
        bayes_error=bayes_error(hist),
        num_corrections=num_corrections,
        phase=phase,
    )


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return UNDEFINED
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6f}"


def records_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in records:
        row = asdict(r)
        buf.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def csv_to_rows(text):
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        vals = line.split(",")
        out.append({k: (None if v == UNDEFINED else float(v)) for k, v in zip(header, vals)})
    return out


class BestLastTracker:
    """Running best and last test accuracy over a metrics stream."""

    def __init__(self):
        self.best = None
        self.last = None

    def update(self, record):
        acc = record.test_acc if isinstance(record, MetricsRecord) else record
        if acc is None:
            return self
        self.last = acc
        self.best = acc if self.best is None else max(self.best, acc)
        return self

    @property
    def gap(self):
        return None if self.best is None else self.best - self.last


def best_last_tracker(stream):
    tracker = BestLastTracker()
    for r in stream:
        tracker.update(r)
    return tracker.best, tracker.last, tracker.gap


def record_field_names():
    return [f.name for f in fields(MetricsRecord)]
