"""Warm-up, correction-epoch detection and iterative label correction."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import Loss, uniform_weights, update_pll_weights
from .metrics import DEFAULT_BINS, evaluate_epoch, margin_batch
from .model import SGD, Classifier, NumericalError, OptimizerConfig, backward

log = logging.getLogger(__name__)

TAU_GRID = (0.0001, 0.001, 0.002, 0.004, 0.008, 0.016)
E0_MODES = ("convergence", "local_max", "fixed")
WARMUP, CORRECTING = "warmup", "correcting"
NO_LABEL = -1
DEFAULT_AUG_SCALE = 0.05


class UndefinedMarginError(ValueError):
    pass


@dataclass
class RefineConfig:
    tau_eps: float = 0.008
    num_aug: int = 1
    aug_sigma: float | None = None  # None: DEFAULT_AUG_SCALE * std of training features
    swapping: bool = False
    e0_mode: str = "convergence"
    e0_fixed: int | None = None

    def __post_init__(self):
        if not (self.tau_eps > 0 and (self.tau_eps < 1 or math.isinf(self.tau_eps))):
            raise ValueError("tau_eps must lie in (0, 1), or be inf to disable correction")
        if self.num_aug < 0:
            raise ValueError("num_aug must be >= 0")
        if self.aug_sigma is not None and self.aug_sigma < 0:
            raise ValueError("aug_sigma must be >= 0")
        if self.e0_mode not in E0_MODES:
            raise ValueError(f"e0_mode must be one of {E0_MODES}")
        if self.e0_mode == "fixed" and (self.e0_fixed is None or self.e0_fixed < 0):
            raise ValueError("fixed e0 mode needs a non-negative e0_fixed")

    @property
    def enabled(self):
        return not math.isinf(self.tau_eps)

    def sigma_for(self, features):
        if self.aug_sigma is not None:
            return self.aug_sigma
        return DEFAULT_AUG_SCALE * float(np.std(features))


@dataclass
class Correction:
    sample_id: int
    epoch: int
    moved_in: int
    moved_out: int  # NO_LABEL unless swapping
    margin: float


@dataclass
class RefineState:
    phase: str = WARMUP
    e0: int | None = None
    val_history: list = field(default_factory=list)
    corrections_log: list = field(default_factory=list)
    recorrected: int = 0  # corrections applied to an already-corrected sample


def margin(f, S):
    """Top candidate probability minus top non-candidate probability."""
    S = np.asarray(S, dtype=bool)
    if not S.any() or S.all():
        raise UndefinedMarginError("margin needs a candidate set that is neither empty nor full")
    return float(margin_batch(np.asarray(f, dtype=float), S))


def detect_e0(val_history, mode="convergence", window=10, tol=1e-5, smooth=5):
    """Epoch at which warm-up ends, or ``None`` while the rule has not fired.

    ``convergence``: first ``e >= window`` whose accumulated change over the
    last ``window`` epochs, ``res[e] - res[e - window]``, is below ``tol``.
    ``local_max``: first strict local maximum of the trailing ``smooth``-epoch
    moving average.
    """
    h = list(val_history)
    if mode == "convergence":
        for e in range(window, len(h)):
            if sum(h[i] - h[i - 1] for i in range(e - window + 1, e + 1)) < tol:
                return e
        return None
    if mode == "local_max":
        s = [float(np.mean(h[max(0, e - smooth + 1) : e + 1])) for e in range(len(h))]
        for e in range(1, len(s) - 1):
            if s[e] > s[e - 1] and s[e] > s[e + 1]:
                return e
        return None
    raise ValueError(f"detect_e0 does not handle mode {mode!r}")


def correction_decisions(clf, X, S, probs, cfg: RefineConfig, sigma, rng):
    """Vectorised detection-and-correction test for a batch.

    Returns ``(selected, moved_in, moved_out, margins)``.  A sample is
    selected when its own margin and the margin of each of its ``num_aug``
    jittered copies are at most ``-tau_eps`` and every copy agrees on the top
    non-candidate label.  Samples whose candidate set is already full are
    never selected.
    """
    S = np.asarray(S, dtype=bool)
    n = len(S)
    full = S.all(axis=1)
    margins = np.full(n, np.nan)
    margins[~full] = margin_batch(probs[~full], S[~full])
    selected = ~full & (margins <= -cfg.tau_eps)
    moved_in = np.where(S, -np.inf, probs).argmax(axis=1)
    idx = np.flatnonzero(selected)
    if idx.size and cfg.num_aug > 0:
        ok = np.ones(idx.size, dtype=bool)
        for _ in range(cfg.num_aug):
            z = X[idx] + sigma * rng.standard_normal(X[idx].shape)
            pz = clf.predict_proba(z)
            ok &= margin_batch(pz, S[idx]) <= -cfg.tau_eps
            ok &= np.where(S[idx], -np.inf, pz).argmax(axis=1) == moved_in[idx]
        selected[idx[~ok]] = False
    moved_out = np.full(n, NO_LABEL)
    if cfg.swapping:
        moved_out = np.where(S, probs, np.inf).argmin(axis=1)
        moved_out[~selected] = NO_LABEL
    return selected, moved_in, moved_out, margins


def apply_correction(S_row, moved_in, moved_out):
    S_row[moved_in] = True
    if moved_out != NO_LABEL:
        S_row[moved_out] = False


def detect_and_correct(sample, clf, cfg: RefineConfig, rng, epoch=0, sample_id=0):
    """Test one sample and, if selected, correct its candidate mask in place.

    Returns the :class:`Correction` or ``None``.
    """
    S = sample.candidates
    if S.all():
        log.warning("sample %s has a full candidate set; nothing to move in", sample_id)
        return None
    X = np.atleast_2d(sample.features)
    probs = clf.predict_proba(X)
    sigma = cfg.aug_sigma if cfg.aug_sigma is not None else DEFAULT_AUG_SCALE
    sel, moved_in, moved_out, margins = correction_decisions(clf, X, S[None, :], probs, cfg, sigma, rng)
    if not sel[0]:
        return None
    apply_correction(S, int(moved_in[0]), int(moved_out[0]))
    return Correction(sample_id, epoch, int(moved_in[0]), int(moved_out[0]), float(margins[0]))


@dataclass
class TrainResult:
    clf: Classifier
    records: list
    state: RefineState
    dataset: object = None  # the trained-on split, with corrected candidate masks


def run_training(
    dataset,
    clf: Classifier,
    loss: Loss,
    opt_cfg: OptimizerConfig,
    refine_cfg: RefineConfig | None = None,
    seed=0,
    bins=DEFAULT_BINS,
    on_epoch=None,
):
    """Train ``clf`` on ``dataset.train`` for ``opt_cfg.max_epochs`` epochs.

    Candidate masks of the training split are corrected in place once the
    warm-up phase ends.  With ``refine_cfg=None`` (or ``tau_eps=inf``) this is
    plain partial-label training; shuffling and augmentation draw from
    separate streams so both cases share one trajectory.
    """
    train = dataset.train
    n = len(train)
    shuffle_rng, aug_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    opt = SGD(opt_cfg)
    state = RefineState()
    weights = uniform_weights(train.candidates)
    corrected_ids = set()
    sigma = refine_cfg.sigma_for(train.features) if refine_cfg else 0.0
    records = []
    bs = opt_cfg.batch_size

    if refine_cfg and refine_cfg.enabled and refine_cfg.e0_mode == "fixed" and refine_cfg.e0_fixed == 0:
        state.phase, state.e0 = CORRECTING, 0

    for epoch in range(opt_cfg.max_epochs):
        if (
            refine_cfg
            and refine_cfg.e0_mode == "fixed"
            and state.phase == WARMUP
            and epoch >= refine_cfg.e0_fixed
        ):
            state.phase, state.e0 = CORRECTING, refine_cfg.e0_fixed
        correcting = state.phase == CORRECTING and refine_cfg is not None and refine_cfg.enabled
        epoch_corrections = 0
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            Xb = train.features[idx]
            Sb = train.candidates[idx]
            probs = clf.predict_proba(Xb)
            target = loss.targets(probs, Sb, weights[idx])
            try:
                _, grads = backward(clf, Xb, target, loss)
            except NumericalError as err:
                err.epoch = epoch
                if err.sample_index is not None:
                    err.sample_index = int(train.ids[idx[err.sample_index]])
                raise
            if correcting:
                sel, moved_in, moved_out, margins = correction_decisions(
                    clf, Xb, Sb, probs, refine_cfg, sigma, aug_rng
                )
            opt.step(clf, grads, epoch)
            if loss.uses_candidate_weights:
                weights[idx] = update_pll_weights(probs, Sb)
            if correcting and sel.any():
                for k in np.flatnonzero(sel):
                    row = idx[k]
                    apply_correction(train.candidates[row], int(moved_in[k]), int(moved_out[k]))
                    sid = int(train.ids[row])
                    if sid in corrected_ids:
                        state.recorrected += 1
                    corrected_ids.add(sid)
                    state.corrections_log.append(
                        Correction(sid, epoch, int(moved_in[k]), int(moved_out[k]), float(margins[k]))
                    )
                    if loss.uses_candidate_weights:
                        weights[row] = update_pll_weights(probs[k], train.candidates[row])
                epoch_corrections += int(sel.sum())

        record = evaluate_epoch(epoch, clf, dataset, bins, epoch_corrections, state.phase)
        records.append(record)
        if record.val_acc is not None:
            state.val_history.append(record.val_acc)
        if state.phase == WARMUP and refine_cfg is not None and refine_cfg.e0_mode != "fixed":
            e0 = detect_e0(state.val_history, refine_cfg.e0_mode)
            if e0 is not None:
                state.phase, state.e0 = CORRECTING, e0
                log.info("correction phase starts after epoch %d (e0=%d)", epoch, e0)
        if on_epoch is not None:
            on_epoch(record)
    if state.recorrected:
        log.info("%d corrections hit previously corrected samples", state.recorrected)
    return TrainResult(clf, records, state, dataset)


CORRECTIONS_HEADER = ("epoch", "sample_id", "moved_in", "moved_out", "margin")


def corrections_to_tsv(corrections) -> str:
    lines = ["\t".join(CORRECTIONS_HEADER)]
    for c in corrections:
        out = "none" if c.moved_out == NO_LABEL else str(c.moved_out)
        lines.append(f"{c.epoch}\t{c.sample_id}\t{c.moved_in}\t{out}\t{c.margin!r}")
    return "\n".join(lines) + "\n"


def tsv_to_corrections(text):
    out = []
    for line in text.strip().splitlines()[1:]:
        epoch, sid, moved_in, moved_out, m = line.split("\t")
        out.append(
            Correction(int(sid), int(epoch), int(moved_in), NO_LABEL if moved_out == "none" else int(moved_out), float(m))
        )
    return out
