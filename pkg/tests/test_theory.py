import itertools
import json
import math

import numpy as np
import pytest

from noisypll.datagen import ConfigurationError
from noisypll.theory import (
    Population,
    TheoryParams,
    TheoryViolation,
    fit_classifier,
    level_set_violations,
    multi_round_refine,
    next_boundary,
    one_round_refine,
    perturbation_bound,
    posterior_for_confidence,
    report_to_text,
    sample_oracle_population,
    simulate_classifier,
)


def test_density_is_normalised_and_two_level():
    p = TheoryParams()
    assert p.c_upper == pytest.approx(2 * p.c_lower)
    assert float(p.cdf(1.0)) == pytest.approx(1.0)
    u = np.linspace(0, 1, 11)
    np.testing.assert_allclose(p.cdf(p.quantile(p.cdf(u))), p.cdf(u))
    assert float(p.cdf(p.epsilon)) == pytest.approx(p.c_lower * p.epsilon)


def test_posterior_shape():
    u = np.array([0.0, 0.3, 0.9])
    post = posterior_for_confidence(u, 5)
    np.testing.assert_allclose(post.sum(axis=1), 1.0)
    np.testing.assert_allclose(post[:, 0] - post[:, 1], u)
    assert np.all(post[:, 1:2] >= post[:, 2:])


def test_round_bound_value():
    p = TheoryParams(alpha=1, epsilon=0.1, imbalance=2, m_init=0.5)
    assert p.round_bound() == pytest.approx(120 * math.log(1.8))
    assert p.exact_rounds() == 71


def test_bracket_for_one_step():
    p = TheoryParams(alpha=1, epsilon=0.12, imbalance=2, eta_init=0.1, m_init=0.5)
    slow = next_boundary(0.5, p, p.slowest_step())
    fast = next_boundary(0.5, p, p.fastest_step())
    assert 1 - slow == pytest.approx(0.505)
    assert 1 - fast == pytest.approx(0.51)
    assert 0.490 <= fast <= slow <= 0.495


def test_boundary_is_clamped_at_epsilon():
    p = TheoryParams()
    assert next_boundary(p.epsilon + 1e-6, p) == p.epsilon


def test_infeasible_parameters_rejected():
    with pytest.raises(ConfigurationError):
        TheoryParams(alpha=1, eta_init=0.3, m_init=0.5)
    with pytest.raises(ConfigurationError):
        TheoryParams(m_init=0.05, epsilon=0.1, eta_init=0.0)


def test_population_noise_statistics():
    p = TheoryParams(alpha=0.5, eta_init=0.3)
    pop = sample_oracle_population(p, 10_000, seed=0)
    assert abs(pop.noisy_mass - 0.3) <= 0.01
    assert np.all(pop.confidence[pop.noisy_mask] < p.m_init)
    clean = sample_oracle_population(TheoryParams(eta_init=0.0), 2000, seed=0)
    assert clean.noisy_mass == 0


def test_too_many_noisy_instances_is_infeasible():
    p = TheoryParams(alpha=0.1, eta_init=0.9, m_init=0.3)
    with pytest.raises(ConfigurationError):
        sample_oracle_population(p, 1000, seed=0)


def test_noisy_mass_above_matches_brute_force():
    rng = np.random.default_rng(0)
    u = rng.choice([0.1, 0.2, 0.5, 0.7], size=60)
    S = rng.random((60, 3)) < 0.5
    y = rng.integers(0, 3, 60)
    pop = Population(u, posterior_for_confidence(u, 3), y, (y + 1) % 3, S)
    got = pop.noisy_mass_above()
    noisy = pop.noisy_mask
    for i in range(60):
        above = u >= u[i]
        assert got[i] == pytest.approx(noisy[above].mean())


def test_zero_and_pure_perturbations():
    p = TheoryParams()
    post = posterior_for_confidence(np.array(0.4), 4)
    np.testing.assert_array_equal(simulate_classifier(post, 0, 1, 0.0, p, mode="none"), post)
    f = simulate_classifier(post, 0, 1, 0.0, p, mode="adversarial")
    assert np.max(np.abs(f - post)) == pytest.approx(p.slack * p.epsilon / 6)
    assert np.max(np.abs(f - post)) < p.epsilon / 6


def test_random_perturbation_within_bound():
    p = TheoryParams()
    rng = np.random.default_rng(0)
    u = rng.random(500)
    post = posterior_for_confidence(u, 4)
    mass = rng.random(500) * 0.3
    f = simulate_classifier(post, np.zeros(500, int), np.ones(500, int), mass, p, mode="random", rng=rng)
    assert np.all(np.abs(f - post) <= perturbation_bound(mass, p)[:, None] + 1e-15)
    np.testing.assert_allclose(f.sum(axis=1), 1.0)


def test_corner_perturbations_keep_level_set_pure():
    # every sign pattern of a bound-sized perturbation leaves argmax = y* above m
    p = TheoryParams()
    m = p.m_init
    for u in (m, m + 0.01, 0.8, 1.0):
        post = posterior_for_confidence(np.array(u), p.num_classes)
        b = perturbation_bound(0.0, p)
        for signs in itertools.product((-1, 1), repeat=p.num_classes):
            f = post + b * np.array(signs)
            assert np.argmax(f) == 0


def test_single_noisy_instance_is_corrected():
    p = TheoryParams(eta_init=0.0)
    u = np.array([0.45, 0.9])
    post = posterior_for_confidence(u, 4)
    S = np.array([[False, True, False, False], [True, False, False, False]])
    pop = Population(u, post, np.array([0, 0]), np.array([1, 1]), S)
    new, m_new, rec = one_round_refine(pop, 0.5, p, mode="none", rng=np.random.default_rng(0))
    assert rec.corrections == 1
    assert new.candidates[0, 0] and not new.candidates[0, 1]
    assert new.noisy_mass == 0


def test_clean_population_needs_no_corrections():
    p = TheoryParams(eta_init=0.0)
    pop = sample_oracle_population(p, 3000, seed=1)
    new, _, rec = one_round_refine(pop, p.m_init, p, rng=np.random.default_rng(0))
    assert rec.corrections == 0
    assert rec.pure_after_correction and rec.pure_after_retrain
    np.testing.assert_array_equal(new.candidates, pop.candidates)


def test_impure_entry_raises():
    p = TheoryParams(eta_init=0.0)
    u = np.array([0.9])
    pop = Population(u, posterior_for_confidence(u, 4), [0], [1], np.array([[False, True, False, False]]))
    with pytest.raises(TheoryViolation):
        one_round_refine(pop, 0.5, p, mode="none")


def test_start_at_epsilon_runs_no_rounds():
    p = TheoryParams(eta_init=0.0, epsilon=0.1, m_init=0.1)
    assert p.exact_rounds() == 0
    report = multi_round_refine(sample_oracle_population(p, 500, seed=0), p)
    assert report.num_rounds == 0
    assert report.rounds == []
    assert report.ok, report.checks


def test_multi_round_purity_every_round():
    p = TheoryParams()
    pop = sample_oracle_population(p, 3000, seed=2)
    report = multi_round_refine(pop, p, seed=2)
    assert report.ok, report.checks
    assert report.num_rounds == p.exact_rounds()
    for rec in report.rounds:
        assert rec.pure_after_correction and rec.pure_after_retrain
    masses = [r.noisy_mass_after for r in report.rounds]
    assert all(b <= a for a, b in zip(masses, masses[1:]))


def test_larger_noise_with_smaller_alpha():
    p = TheoryParams(alpha=0.5, eta_init=0.3)
    report = multi_round_refine(sample_oracle_population(p, 10_000, seed=0), p, seed=0)
    assert report.ok, report.checks
    assert report.final_noisy_mass < p.c_upper * p.epsilon


@pytest.mark.parametrize("mode", ["random", "none"])
def test_other_perturbation_modes(mode):
    p = TheoryParams()
    report = multi_round_refine(sample_oracle_population(p, 2000, seed=3), p, mode=mode, seed=3)
    assert report.checks["purity_every_round"]
    assert report.checks["final_noisy_mass_below_guarantee"]


def test_report_serialisation():
    p = TheoryParams()
    report = multi_round_refine(sample_oracle_population(p, 500, seed=0), p, seed=0)
    data = json.loads(report.to_json())
    assert data["num_rounds"] == report.num_rounds
    assert len(data["rounds"]) == report.num_rounds
    text = report_to_text(report)
    assert text.count("\n") >= report.num_rounds


def test_level_set_scan():
    u = np.array([0.2, 0.6, 0.7])
    post = posterior_for_confidence(u, 3)
    S = np.array([[True, False, False], [False, True, False], [True, False, False]])
    pop = Population(u, post, [0, 0, 0], [1, 1, 1], S)
    assert level_set_violations(pop, post, 0.5).tolist() == [1]
    assert level_set_violations(pop, post, 0.65).tolist() == []
