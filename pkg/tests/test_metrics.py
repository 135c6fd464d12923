from fractions import Fraction

import numpy as np
import pytest

from noisypll.datagen import DatasetSpec, PartialDataset, make_dataset
from noisypll.metrics import (
    CSV_COLUMNS,
    BestLastTracker,
    MetricsRecord,
    TauHistogram,
    accuracy,
    bayes_error,
    best_last_tracker,
    csv_to_rows,
    evaluate_epoch,
    hit_accuracy,
    margin_batch,
    random_guess_hit_rate,
    records_to_csv,
    transductive_accuracy,
)
from noisypll.model import Classifier


def hist(clean, noisy, lo=-1.0, hi=1.0):
    edges = np.linspace(lo, hi, len(clean) + 1)
    return TauHistogram(edges, np.array(clean), np.array(noisy))


def brute_bayes(h):
    """Equal-prior Bayes error from densities, in exact rationals."""
    n1, n2 = sum(int(c) for c in h.counts_clean), sum(int(c) for c in h.counts_noisy)
    width = Fraction(h.bin_edges[1]) - Fraction(h.bin_edges[0])
    total = Fraction(0)
    for a, b in zip(h.counts_clean, h.counts_noisy):
        p1 = Fraction(int(a), n1) / width
        p2 = Fraction(int(b), n2) / width
        total += Fraction(1, 2) * min(p1, p2) * width
    return total


def test_bayes_error_hand_histogram():
    h = hist([8, 2, 0, 0], [0, 2, 8, 0])
    assert h.bin_width == 0.5
    assert bayes_error(h) == pytest.approx(0.1)


def test_bayes_error_extremes():
    assert bayes_error(hist([3, 5, 2], [6, 10, 4])) == 0.5
    assert bayes_error(hist([3, 0, 0], [0, 0, 4])) == 0


def test_bayes_error_empty_subset():
    assert bayes_error(hist([1, 2], [0, 0])) is None


def test_bayes_error_matches_exact_rationals():
    rng = np.random.default_rng(0)
    for _ in range(200):
        bins = int(rng.integers(1, 30))
        c1 = rng.integers(0, 50, bins)
        c2 = rng.integers(0, 50, bins)
        c1[0] += 1
        c2[-1] += 1
        h = hist(c1, c2)
        assert bayes_error(h) == float(brute_bayes(h))


def test_histogram_counts_and_clipping():
    h = TauHistogram.from_margins(np.array([-1.0, 1.0, 0.0, 0.3]), np.array([True, True, False, False]), bins=4)
    assert h.counts_clean.tolist() == [1, 0, 0, 1]
    assert h.counts_noisy.tolist() == [0, 0, 2, 0]


def test_margin_batch():
    f = np.array([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]])
    S = np.array([[True, False, False], [True, False, False]])
    np.testing.assert_allclose(margin_batch(f, S), [0.2, -0.3])


def brute_hits(data, probs):
    hc = tc = hn = tn = 0
    for i in range(len(data)):
        s = data[i]
        inside = [j for j in range(data.num_classes) if s.candidates[j]]
        outside = [j for j in range(data.num_classes) if not s.candidates[j]]
        if s.omega == "clean":
            tc += 1
            hc += max(inside, key=lambda j: (probs[i, j], -j)) == s.true_label
        else:
            tn += 1
            hn += max(outside, key=lambda j: (probs[i, j], -j)) == s.true_label
    return (hc / tc if tc else None, hn / tn if tn else None)


def test_hit_accuracy_matches_brute_force():
    ds = make_dataset(DatasetSpec(num_samples=500, seed=3))
    probs = np.random.default_rng(0).dirichlet(np.ones(5), size=len(ds.train))
    assert hit_accuracy(ds.train, probs) == brute_hits(ds.train, probs)


def test_oracle_hits_and_empty_noisy_subset():
    ds = make_dataset(DatasetSpec(eta=0.0))
    oracle = np.eye(5)[ds.train.labels] * 0.9 + 0.02
    phi_c, phi_n = hit_accuracy(ds.train, oracle)
    assert phi_c == 1.0
    assert phi_n is None


def test_random_guess_rate():
    assert random_guess_hit_rate(10, 0.3) == pytest.approx(1 / 6.3)


def test_accuracies():
    labels = np.array([0, 1, 2, 1])
    probs = np.eye(3)[[0, 1, 1, 1]]
    assert accuracy(labels, probs) == 0.75
    assert accuracy(np.array([], dtype=int), np.zeros((0, 3))) is None
    ds = make_dataset(DatasetSpec(num_samples=500))
    uniform = np.full((len(ds.train), 5), 0.2)
    assert transductive_accuracy(ds.train, uniform) == pytest.approx(np.mean(ds.train.labels == 0))


def test_tracker():
    recs = [MetricsRecord(i, 0, None, None, None, a, None, None) for i, a in enumerate([0.5, 0.9, 0.7])]
    best, last, gap = best_last_tracker(recs)
    assert (best, last) == (0.9, 0.7)
    assert gap == pytest.approx(0.2)
    t = BestLastTracker()
    for a in (0.1, 0.2, 0.3):
        t.update(MetricsRecord(0, 0, None, None, None, a, None, None))
    assert t.gap == 0


def test_evaluate_epoch_and_csv_round_trip():
    ds = make_dataset(DatasetSpec(num_samples=300))
    clf = Classifier.init([2, 8, 5], seed=0)
    rec = evaluate_epoch(0, clf, ds)
    assert rec.train_noise_level == ds.train.noise_level
    probs = clf.predict_proba(ds.train.features)
    assert rec.transductive_acc == np.mean(probs.argmax(1) == ds.train.labels)
    text = records_to_csv([rec])
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    row = csv_to_rows(text)[0]
    assert row["epoch"] == 0
    assert row["test_acc"] == pytest.approx(rec.test_acc, abs=1e-6)


def test_csv_marks_undefined():
    rec = MetricsRecord(3, 0.0, 1.0, None, 0.5, 0.5, 0.5, None)
    line = records_to_csv([rec]).splitlines()[1]
    assert line == "3,0.000000,1.000000,NA,0.500000,0.500000,0.500000,NA"
    assert csv_to_rows(records_to_csv([rec]))[0]["phi_n"] is None


def test_full_candidate_rows_excluded_from_histogram():
    X = np.zeros((3, 2))
    ds = make_dataset(DatasetSpec(num_samples=100))
    S = np.array([[True, True, True, True, True], [True, False, False, False, False], [False, True, False, False, False]])
    ds.train = PartialDataset(X, np.array([0, 1, 1]), S)
    rec = evaluate_epoch(0, Classifier.init([2, 5]), ds)
    # one clean (full S) row dropped, leaves one clean and one noisy row
    assert rec.bayes_error is not None
