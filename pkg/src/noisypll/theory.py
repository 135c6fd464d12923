"""Oracle-population simulation of multi-round candidate-set refinement.

Instances carry a known posterior, so the confidence ``u(x)`` (gap between the
top two posterior probabilities), the Bayes label ``y*`` and the runner-up
``o*`` are exact.  A "trained" classifier is simulated as the posterior plus a
perturbation whose size is capped by ``alpha`` times the noisy fraction among
instances at least as confident as ``x``, plus ``epsilon / 6``.  Refinement
rounds shrink the boundary ``m`` of the level set ``{u >= m}`` and the
simulator checks, by exact scans, that the level set stays pure: every member
has ``y*`` in its candidate set and the classifier predicts ``y*``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import ConfigurationError

PERTURBATIONS = ("adversarial", "random", "none")


class TheoryViolation(AssertionError):
    pass


@dataclass(frozen=True)
class TheoryParams:
    """Constants of the refinement analysis.

    The confidence density is two-level: ``c_lower`` below ``split`` and
    ``c_upper = imbalance * c_lower`` above it, normalised on ``[0, 1]``.
    """

    alpha: float = 1.0
    epsilon: float = 0.1
    imbalance: float = 2.0
    eta_init: float = 0.2
    m_init: float = 0.5
    num_classes: int = 4
    q: float = 0.3
    split: float = 0.5
    slack: float = 0.999  # keeps perturbations strictly inside the bound

    def __post_init__(self):
        if self.alpha <= 0 or not 0 < self.epsilon < 1:
            raise ConfigurationError("need alpha > 0 and 0 < epsilon < 1")
        if self.imbalance <= 1:
            raise ConfigurationError("imbalance ratio must exceed 1")
        if not 0 < self.split < 1 or not 0 < self.slack <= 1:
            raise ConfigurationError("split must lie in (0, 1) and slack in (0, 1]")
        if self.num_classes < 2 or not 0 <= self.q < 1 or not 0 <= self.eta_init < 1:
            raise ConfigurationError("invalid num_classes, q or eta_init")
        noise_floor = 2 * self.alpha * self.eta_init + self.epsilon / 3
        if not (self.m_init > noise_floor and self.epsilon <= self.m_init < 1):
            floor = max(noise_floor, self.epsilon)
            raise ConfigurationError(f"m_init must lie in [{floor:.4f}, 1) and exceed {noise_floor:.4f}")

    @property
    def c_lower(self):
        return 1.0 / (self.split + self.imbalance * (1.0 - self.split))

    @property
    def c_upper(self):
        return self.imbalance * self.c_lower

    def density(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < self.split, self.c_lower, self.c_upper)

    def cdf(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        lo = self.c_lower * np.minimum(u, self.split)
        return lo + self.c_upper * np.maximum(u - self.split, 0.0)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        knee = self.c_lower * self.split
        return np.where(p < knee, p / self.c_lower, self.split + (p - knee) / self.c_upper)

    def slowest_step(self):
        return 1.0 + self.epsilon / (6 * self.alpha * self.imbalance)

    def fastest_step(self):
        return 1.0 + self.epsilon / (3 * self.alpha * self.imbalance)

    def round_bound(self):
        """Sufficient round count ``(6 l alpha / eps) log((1 - eps) / (1 - m_init))``."""
        return (6 * self.imbalance * self.alpha / self.epsilon) * math.log(
            (1 - self.epsilon) / (1 - self.m_init)
        )

    def exact_rounds(self):
        """Rounds the slowest admissible schedule needs to bring ``m`` to ``epsilon``."""
        if self.m_init <= self.epsilon:
            return 0
        return math.ceil(math.log((1 - self.epsilon) / (1 - self.m_init)) / math.log(self.slowest_step()))


@dataclass(frozen=True)
class OracleInstance:
    posterior: np.ndarray
    y_star: int
    o_star: int
    confidence: float
    candidates: np.ndarray

    @property
    def noisy(self):
        return not self.candidates[self.y_star]


class Population:
    """Arrays describing ``n`` oracle instances; ``candidates`` is mutable."""

    def __init__(self, confidence, posterior, y_star, o_star, candidates):
        self.confidence = np.asarray(confidence, dtype=float)
        self.posterior = np.asarray(posterior, dtype=float)
        self.y_star = np.asarray(y_star, dtype=np.int64)
        self.o_star = np.asarray(o_star, dtype=np.int64)
        self.candidates = np.asarray(candidates, dtype=bool)

    def __len__(self):
        return len(self.confidence)

    def __getitem__(self, i):
        return OracleInstance(
            self.posterior[i], int(self.y_star[i]), int(self.o_star[i]), float(self.confidence[i]), self.candidates[i].copy()
        )

    def copy(self):
        return Population(self.confidence, self.posterior, self.y_star, self.o_star, self.candidates.copy())

    @property
    def noisy_mask(self):
        return ~self.candidates[np.arange(len(self)), self.y_star]

    @property
    def noisy_mass(self):
        return float(self.noisy_mask.mean())

    def noisy_mass_above(self):
        """Per instance, the noisy fraction among instances with ``u(z) >= u(x)``."""
        order = np.argsort(-self.confidence, kind="stable")
        noisy_sorted = self.noisy_mask[order]
        cum = np.cumsum(noisy_sorted) / np.arange(1, len(self) + 1)
        # ties: every member of a tie block sees the whole block
        u_sorted = self.confidence[order]
        last_of_block = np.r_[u_sorted[1:] != u_sorted[:-1], True]
        block_end = _block_ends(last_of_block)
        out = np.empty(len(self))
        out[order] = cum[block_end]
        return out


def _block_ends(last_of_block):
    n = len(last_of_block)
    ends = np.empty(n, dtype=np.int64)
    current = n - 1
    for i in range(n - 1, -1, -1):
        if last_of_block[i]:
            current = i
        ends[i] = current
    return ends


def posterior_for_confidence(u, num_classes):
    """Top-two-plus-flat posterior with ``p[0] - p[1] == u``.

    Labels beyond the top two share half the runner-up probability each.
    """
    u = np.asarray(u, dtype=float)
    C = num_classes
    top = (2 + u * C) / (2 + C)
    second = top - u
    p = np.empty(u.shape + (C,))
    p[..., 0] = top
    p[..., 1] = second
    p[..., 2:] = (second / 2)[..., None]
    return p


def sample_oracle_population(params: TheoryParams, n, seed=0) -> Population:
    """Draw ``n`` instances whose noisy members all sit below ``m_init``.

    Exactly ``round(eta_init * n)`` instances are noisy, chosen uniformly among
    those with ``u < m_init``.
    """
    rng = np.random.default_rng(seed)
    C = params.num_classes
    u = params.quantile(rng.random(n))
    ranked = posterior_for_confidence(u, C)
    labels = np.argsort(rng.random((n, C)), axis=1)  # random label order per instance
    posterior = np.empty_like(ranked)
    np.put_along_axis(posterior, labels, ranked, axis=1)
    y_star, o_star = labels[:, 0], labels[:, 1]

    rows = np.arange(n)
    S = rng.random((n, C)) < params.q
    S[rows, y_star] = True
    k = int(round(params.eta_init * n))
    eligible = np.flatnonzero((u < params.m_init) & ~S.all(axis=1))
    if k > len(eligible):
        raise ConfigurationError(
            f"eta_init={params.eta_init} needs {k} noisy instances below m_init but only {len(eligible)} exist"
        )
    noisy = rng.choice(eligible, size=k, replace=False) if k else np.array([], dtype=np.int64)
    keys = np.where(S[noisy], -1.0, rng.random((len(noisy), C)))
    S[noisy, keys.argmax(axis=1)] = True
    S[noisy, y_star[noisy]] = False
    return Population(u, posterior, y_star, o_star, S)


def perturbation_bound(noisy_mass, params: TheoryParams):
    return params.slack * (params.alpha * np.asarray(noisy_mass, dtype=float) + params.epsilon / 6)


def simulate_classifier(posterior, y_star, o_star, noisy_mass, params: TheoryParams, mode="adversarial", rng=None):
    """Estimated probabilities within the consistency bound of the posterior.

    ``adversarial`` moves the bound's full size off ``y*`` onto ``o*``;
    ``random`` draws a zero-sum perturbation inside the bound; ``none``
    returns the posterior.  Works on one instance or on arrays of them.
    """
    if mode not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    post = np.array(posterior, dtype=float, ndmin=2)
    y = np.atleast_1d(y_star)
    o = np.atleast_1d(o_star)
    b = np.atleast_1d(perturbation_bound(noisy_mass, params))
    f = post.copy()
    rows = np.arange(len(post))
    if mode == "adversarial":
        f[rows, y] -= b
        f[rows, o] += b
    elif mode == "random":
        rng = rng if rng is not None else np.random.default_rng()
        v = rng.uniform(-1.0, 1.0, size=post.shape)
        f += 0.5 * b[:, None] * (v - v.mean(axis=1, keepdims=True))
    return f[0] if np.ndim(posterior) == 1 else f


def fit_classifier(pop: Population, params: TheoryParams, mode="adversarial", rng=None):
    """Classifier "trained" on the population's current candidate sets."""
    return simulate_classifier(pop.posterior, pop.y_star, pop.o_star, pop.noisy_mass_above(), params, mode, rng)


def level_set_violations(pop: Population, f, m):
    """Members of ``{u >= m}`` that break purity (missing ``y*`` or mispredicted)."""
    inside = pop.confidence >= m
    rows = np.arange(len(pop))
    bad = ~pop.candidates[rows, pop.y_star] | (np.argmax(f, axis=1) != pop.y_star)
    return np.flatnonzero(inside & bad)


def next_boundary(m, params: TheoryParams, step=None):
    """Boundary after one round, clamped at ``epsilon``.

    ``step`` is the growth factor of ``1 - m``; default is the slowest
    admissible one.
    """
    step = params.slowest_step() if step is None else step
    return max(1.0 - step * (1.0 - m), params.epsilon)


@dataclass
class RoundRecord:
    round: int
    m: float
    m_new: float
    noisy_mass_before: float
    noisy_mass_after: float
    corrections: int
    pure_before: bool
    pure_after_correction: bool
    pure_after_retrain: bool
    bracket_lower_ok: bool
    bracket_upper_ok: bool
    clamped: bool


def one_round_refine(pop: Population, m, params: TheoryParams, mode="adversarial", rng=None, step=None, round_index=0):
    """One refinement round starting from a boundary ``m`` whose level set is pure.

    Instances whose top non-candidate beats the top candidate by at least
    ``m_new - epsilon`` get that label swapped in for their least likely
    candidate.  Returns ``(new_population, m_new, RoundRecord)``; raises
    :class:`TheoryViolation` if purity fails before or after.
    """
    f = fit_classifier(pop, params, mode, rng)
    if len(level_set_violations(pop, f, m)):
        raise TheoryViolation(f"level set at m={m:.6f} is not pure on entry")
    m_new = next_boundary(m, params, step)
    S = pop.candidates
    full = S.all(axis=1)
    top_out = np.where(S, -np.inf, f).max(axis=1)
    top_in = np.where(S, f, -np.inf).max(axis=1)
    fire = ~full & (top_out - top_in >= m_new - params.epsilon)
    moved_in = np.where(S, -np.inf, f).argmax(axis=1)
    moved_out = np.where(S, f, np.inf).argmin(axis=1)
    new = pop.copy()
    idx = np.flatnonzero(fire)
    new.candidates[idx, moved_in[idx]] = True
    new.candidates[idx, moved_out[idx]] = False

    pure_corr = len(level_set_violations(new, f, m_new)) == 0
    f_new = fit_classifier(new, params, mode, rng)
    pure_retrain = len(level_set_violations(new, f_new, m_new)) == 0
    tol = 1e-12
    clamped = m_new == params.epsilon and 1.0 - params.slowest_step() * (1.0 - m) < params.epsilon
    record = RoundRecord(
        round=round_index,
        m=float(m),
        m_new=float(m_new),
        noisy_mass_before=pop.noisy_mass,
        noisy_mass_after=new.noisy_mass,
        corrections=int(fire.sum()),
        pure_before=True,
        pure_after_correction=pure_corr,
        pure_after_retrain=pure_retrain,
        bracket_lower_ok=clamped or (1 - m_new) >= params.slowest_step() * (1 - m) - tol,
        bracket_upper_ok=(1 - m_new) <= params.fastest_step() * (1 - m) + tol,
        clamped=clamped,
    )
    if not (pure_corr and pure_retrain):
        raise TheoryViolation(f"level set at m_new={m_new:.6f} lost purity in round {round_index}")
    return new, m_new, record


@dataclass
class RefinementReport:
    params: dict
    n: int
    perturbation: str
    rounds: list = field(default_factory=list)
    num_rounds: int = 0
    exact_rounds: int = 0
    round_bound: float = 0.0
    initial_noisy_mass: float = 0.0
    final_noisy_mass: float = 0.0
    final_disagreement: float = 0.0
    mass_below_epsilon: float = 0.0
    guarantee: float = 0.0  # c_upper * epsilon
    checks: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.checks.values())

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def multi_round_refine(pop: Population, params: TheoryParams, mode="adversarial", seed=0, max_rounds=100_000):
    """Run rounds from ``m_init`` until the boundary reaches ``epsilon``.

    Returns a :class:`RefinementReport`; a purity failure propagates as
    :class:`TheoryViolation`.
    """
    rng = np.random.default_rng(seed)
    report = RefinementReport(
        params={**asdict(params), "c_lower": params.c_lower, "c_upper": params.c_upper},
        n=len(pop),
        perturbation=mode,
        exact_rounds=params.exact_rounds(),
        round_bound=params.round_bound(),
        initial_noisy_mass=pop.noisy_mass,
        guarantee=params.c_upper * params.epsilon,
    )
    m = params.m_init
    r = 0
    while m > params.epsilon and r < max_rounds:
        pop, m, rec = one_round_refine(pop, m, params, mode, rng, round_index=r)
        report.rounds.append(rec)
        r += 1
    f_final = fit_classifier(pop, params, mode, rng)
    report.num_rounds = r
    report.final_noisy_mass = pop.noisy_mass
    report.final_disagreement = float(np.mean(np.argmax(f_final, axis=1) != pop.y_star))
    report.mass_below_epsilon = float(np.mean(pop.confidence < params.epsilon))
    report.checks = {
        "purity_every_round": all(x.pure_after_correction and x.pure_after_retrain for x in report.rounds),
        "bracket_every_round": all(x.bracket_lower_ok and x.bracket_upper_ok for x in report.rounds),
        "reached_epsilon": m <= params.epsilon,
        "rounds_exceed_bound": r > report.round_bound or params.m_init <= params.epsilon,
        "rounds_within_bound_ceiling": r <= math.ceil(report.round_bound),
        "final_noisy_mass_below_guarantee": report.final_noisy_mass < report.guarantee,
        "final_disagreement_below_guarantee": report.final_disagreement < report.guarantee,
    }
    return report


def report_to_text(report: RefinementReport) -> str:
    """Plain-text rendering: one line per round, then the final checks."""
    lines = [
        f"# refinement report n={report.n} perturbation={report.perturbation}",
        "round\tm\tm_new\tnoisy_mass\tcorrections",
    ]
    for x in report.rounds:
        lines.append(f"{x.round}\t{x.m:.6f}\t{x.m_new:.6f}\t{x.noisy_mass_after:.6f}\t{x.corrections}")
    lines += [
        f"rounds\t{report.num_rounds}",
        f"round_bound\t{report.round_bound:.6f}",
        f"final_noisy_mass\t{report.final_noisy_mass:.6f}",
        f"final_disagreement\t{report.final_disagreement:.6f}",
        f"guarantee\t{report.guarantee:.6f}",
    ]
    lines += [f"check.{k}\t{'pass' if v else 'FAIL'}" for k, v in report.checks.items()]
    return "\n".join(lines) + "\n"
