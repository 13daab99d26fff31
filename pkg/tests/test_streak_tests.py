import itertools
import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hothand.errors import InsufficientDataError, UndefinedSampleError
from hothand.shotlog import GameSequence
from hothand.streak_tests import (
    EffectEstimate,
    SimulationConfig,
    adjusted_effect,
    analyze_player,
    hetero_bernoulli_test,
    model_error_estimate,
    permutation_test,
    player_significance,
    replicate_adjusted_effects,
    simulate_outcomes,
)


def _rate_after_make(seq):
    hits = [seq[i] for i in range(1, len(seq)) if seq[i - 1] == 1]
    return sum(hits) / len(hits) if hits else None


def _hetero_games(gen, n_games, n_shots, low=0.3, high=0.7):
    p = gen.uniform(low, high, (n_games, n_shots))
    outcomes = (gen.random(p.shape) < p).astype(int)
    return [list(row) for row in outcomes], p.ravel()


# --------------------------------------------------------------------------
# permutation test


def test_permutation_mean_matches_enumeration():
    arrangements = set(itertools.permutations([1, 1, 0, 0]))
    rates = [_rate_after_make(a) for a in arrangements]
    exact = sum(rates) / len(rates)
    assert len(arrangements) == 6
    assert exact == pytest.approx(1 / 3)

    res = permutation_test(["MMXX"], 1, 20000, seed=1)
    perm = res.perm_rates[~np.isnan(res.perm_rates)]
    se = perm.std() / math.sqrt(perm.size)
    assert abs(perm.mean() - exact) < 4 * se
    assert res.observed == 0.5


def test_permutation_all_makes():
    res = permutation_test(["MMMMMM"], 2, 50, seed=3)
    assert res.observed == 1.0
    assert np.all(res.perm_rates == 1.0)
    assert res.p == 1.0


def test_permutation_preserves_per_game_counts():
    # shuffling across games would sometimes put a make after a make in game 2
    res = permutation_test(["MMM", "XXX"], 1, 200, seed=0)
    assert np.all(res.perm_rates == 1.0)
    assert res.p == 1.0


def test_permutation_empty_sample():
    with pytest.raises(UndefinedSampleError):
        permutation_test(["XXXX", "MX"], 2, 10, seed=0)


def test_permutation_deterministic():
    a = permutation_test(["MMXMXXMMMX"], 1, 100, seed=9, player_id="A")
    b = permutation_test(["MMXMXXMMMX"], 1, 100, seed=9, player_id="A")
    assert np.array_equal(a.perm_rates, b.perm_rates, equal_nan=True)
    assert a.p == b.p and a.p_randomized == b.p_randomized


def _null_permutation_results():
    gen = np.random.default_rng(2718)
    return [permutation_test([(gen.random(50) < 0.5).astype(int)], 1, 1000, seed=i) for i in range(500)]


def test_permutation_null_calibration():
    results = _null_permutation_results()
    p_rand = np.array([r.p_randomized for r in results])
    ks = stats.kstest(p_rand, "uniform").statistic
    # 1% critical value of the one-sample KS statistic at n = 500
    crit = stats.kstwo.ppf(0.99, p_rand.size)
    print(f"KS statistic {ks:.4f} vs critical {crit:.4f}")
    assert ks < crit

    # the tie-inclusive p-value is conservative: never rejects more than alpha beyond noise
    p = np.array([r.p for r in results])
    for alpha in (0.01, 0.05, 0.1, 0.25, 0.5):
        upper = stats.binom.ppf(0.995, p.size, alpha) / p.size
        assert np.mean(p <= alpha) <= upper
    assert np.all(p >= p_rand)


# --------------------------------------------------------------------------
# heterogeneous simulation


def test_certain_makes():
    games = ["MMMM", "MMM"]
    est = hetero_bernoulli_test(games, np.ones(7), 1, SimulationConfig(n_sims=10))
    assert est.observed_rate == 1.0
    assert np.all(est.sim_rates == 1.0)
    assert est.raw_effect == 0.0


def test_333_shot_fixture_effect():
    # two-shot games: the first shot always goes in, the second has p = 0.387
    games = ["MM"] * 142 + ["MX"] * 191
    p = np.tile([1.0, 0.387], 333)
    est = hetero_bernoulli_test(games, p, 1, SimulationConfig(n_sims=20000, master_seed=5))
    assert est.sample_size == 333
    assert round(est.observed_rate, 3) == 0.426
    se = math.sqrt(0.387 * 0.613 / 333) / math.sqrt(20000)
    assert est.raw_effect == pytest.approx(142 / 333 - 0.387, abs=4 * se)
    assert round(est.raw_effect, 3) == pytest.approx(0.039, abs=0.0015)


def test_alignment_mismatch():
    with pytest.raises(ValueError, match="length"):
        hetero_bernoulli_test(["MMX"], [0.5, 0.5], 1, SimulationConfig())
    with pytest.raises(ValueError):
        hetero_bernoulli_test(["MMX"], [0.5, 0.5, 1.5], 1, SimulationConfig())


def test_raw_effect_identity():
    gen = np.random.default_rng(0)
    games, p = _hetero_games(gen, 10, 10)
    est = hetero_bernoulli_test(games, p, 2, SimulationConfig(n_sims=30))
    defined = est.sim_rates[~np.isnan(est.sim_rates)]
    assert est.raw_effect == est.observed_rate - defined.mean()


def test_undefined_replicates_excluded():
    # the second shot only follows a make when the 5% first shot goes in
    games = ["MM"]
    est = hetero_bernoulli_test(games, [0.05, 0.5], 1, SimulationConfig(n_sims=200, master_seed=1))
    n_undefined = np.isnan(est.sim_rates).sum()
    assert 150 < n_undefined < 200
    assert est.raw_effect == pytest.approx(1.0 - np.nanmean(est.sim_rates))


def test_null_coverage():
    gen = np.random.default_rng(99)
    inside = 0
    for trial in range(100):
        games, p = _hetero_games(gen, 100, 20)
        est = hetero_bernoulli_test(games, p, 1, SimulationConfig(n_sims=100, master_seed=trial))
        lo, hi = np.nanpercentile(est.sim_rates, [2.5, 97.5])
        inside += lo <= est.observed_rate <= hi
    print(f"observed rate inside the 95% replicate band in {inside}/100 experiments")
    assert inside >= 90


# --------------------------------------------------------------------------
# model error


def test_model_error_concentration():
    gen = np.random.default_rng(5)
    ok = 0
    trials = 300
    for t in range(trials):
        games, p = _hetero_games(gen, 25, 20)
        m = int(gen.integers(50, 400))
        null = model_error_estimate(games, p, m, 50, seed=t)
        pbar = p.mean()
        ok += abs(null.epsilon) <= 3 * math.sqrt(pbar * (1 - pbar) / m)
    assert ok >= 0.99 * trials


def test_model_error_detects_deflated_model():
    gen = np.random.default_rng(6)
    eps = []
    for t in range(50):
        games, p = _hetero_games(gen, 100, 20)
        eps.append(model_error_estimate(games, p - 0.05, 1000, 50, seed=t).epsilon)
    assert np.mean(eps) == pytest.approx(0.05, abs=0.01)


def test_model_error_subset():
    games = ["MMXX", "XM"]
    null = model_error_estimate(games, np.full(6, 0.5), 4, 20, seed=1)
    assert null.subset.size == 4 and len(set(null.subset.tolist())) == 4
    assert null.epsilon == null.null_observed - null.null_sim_mean
    with pytest.raises(UndefinedSampleError):
        model_error_estimate(games, np.full(6, 0.5), 0, 20, seed=1)
    with pytest.raises(ValueError):
        model_error_estimate(games, np.full(6, 0.5), 7, 20, seed=1)


# --------------------------------------------------------------------------
# adjustment and significance


@pytest.mark.parametrize(
    "data, sim, null_data, null_sim, expected",
    [
        ("0.426", "0.387", "0.398", "0.384", "0.025"),
        ("0.516", "0.376", "0.410", "0.383", "0.113"),
    ],
)
def test_adjusted_effect_exact(data, sim, null_data, null_sim, expected):
    e = Decimal(data) - Decimal(sim)
    eps = Decimal(null_data) - Decimal(null_sim)
    assert adjusted_effect(e, eps) == Decimal(expected)


def test_adjusted_effect_cancellation():
    assert adjusted_effect(0.037, 0.037) == 0.0
    with pytest.raises(ValueError):
        adjusted_effect(math.nan, 0.1)


def _estimate(observed, sim_rates, null_observed, null_sim_rates):
    sim_rates = np.asarray(sim_rates, dtype=float)
    e = observed - np.nanmean(sim_rates)
    eps = null_observed - np.mean(null_sim_rates)
    return EffectEstimate(
        k=1, sample_size=100, observed_rate=observed, sim_rates=sim_rates, raw_effect=e,
        null_observed_rate=null_observed, null_sim_rates=np.asarray(null_sim_rates, dtype=float),
        model_error=eps, adjusted_effect=e - eps,
    )


def test_zero_variance_positive_rejects():
    est = _estimate(0.6, [0.5] * 10, 0.5, [0.5] * 10)
    assert player_significance(est) == 0.0
    assert player_significance(_estimate(0.4, [0.5] * 10, 0.5, [0.5] * 10)) == 1.0


def test_symmetric_replicates_half():
    est = _estimate(0.5, [0.4, 0.6, 0.45, 0.55], 0.5, [0.5] * 4)
    assert player_significance(est) == pytest.approx(0.5)
    assert player_significance(est, "replicate-mean") == pytest.approx(0.5)


def test_too_few_replicates():
    est = _estimate(0.5, [0.4, np.nan, np.nan], 0.5, [0.5] * 3)
    with pytest.raises(InsufficientDataError):
        player_significance(est)


def test_t_statistics_against_reference_formulas():
    gen = np.random.default_rng(3)
    sim = gen.normal(0.45, 0.03, 100)
    null_sim = gen.normal(0.44, 0.02, 100)
    est = _estimate(0.49, sim, 0.45, null_sim)
    d = (0.49 - sim) - (0.45 - null_sim)
    # replicate-mean form is the ordinary one-sample t-test
    ref = stats.ttest_1samp(d, 0.0, alternative="greater").pvalue
    assert player_significance(est, "replicate-mean") == pytest.approx(ref, rel=1e-10)
    # prediction form: single case against a sample of n
    n = d.size
    t = d.mean() / (d.std(ddof=1) * math.sqrt((n + 1) / n))
    assert player_significance(est, "prediction") == pytest.approx(stats.t.sf(t, n - 1), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_mean_replicate_effect_equals_adjusted_effect(seed):
    gen = np.random.default_rng(seed)
    games, p = _hetero_games(gen, 8, 12)
    res = analyze_player(games, p, SimulationConfig(n_sims=20, master_seed=seed, k_values=(1, 2)), "Z")
    for est in res.estimates.values():
        assert est.adjusted_effect == est.raw_effect - est.model_error
        assert replicate_adjusted_effects(est).mean() == pytest.approx(est.adjusted_effect, abs=1e-12)
        assert 0.0 <= est.p_value <= 1.0


# --------------------------------------------------------------------------
# whole-player runs


def test_replicate_streams_depend_only_on_seed_player_index():
    p = np.linspace(0.1, 0.9, 40)
    a = simulate_outcomes(p, 5, 11, "A")
    b = simulate_outcomes(p, 10, 11, "A")
    assert np.array_equal(a, b[:5])
    assert not np.array_equal(a, simulate_outcomes(p, 5, 11, "B"))
    assert not np.array_equal(a, simulate_outcomes(p, 5, 12, "A"))


def test_analyze_player_deterministic_and_paired():
    gen = np.random.default_rng(8)
    games, p = _hetero_games(gen, 30, 15)
    config = SimulationConfig(n_sims=40, master_seed=21)
    r1 = analyze_player(games, p, config, "X")
    r2 = analyze_player(games, p, config, "X")
    for k in r1.estimates:
        a, b = r1.estimates[k], r2.estimates[k]
        assert a.p_value == b.p_value and a.adjusted_effect == b.adjusted_effect
        assert np.array_equal(a.sim_rates, b.sim_rates, equal_nan=True)
    # standalone calls with the same seed and player replay the same replicates
    est = r1.estimates[1]
    alone = hetero_bernoulli_test(games, p, 1, config, "X")
    assert np.array_equal(alone.sim_rates, est.sim_rates, equal_nan=True)
    null = model_error_estimate(games, p, est.sample_size, 40, 21, "X", label=1)
    assert np.array_equal(null.null_sim_rates, est.null_sim_rates)


def test_analyze_player_skips_empty_k():
    games = [GameSequence.from_outcomes("MXMXMX", game_id=f"G{i}") for i in range(5)]
    res = analyze_player(games, np.full(30, 0.5), SimulationConfig(n_sims=10, k_values=(1, 2)), "P")
    assert set(res.estimates) == {1}
    assert 2 in res.skipped
    assert res.significant(2) is False


def test_significance_flag_matches_p_value():
    gen = np.random.default_rng(10)
    games, p = _hetero_games(gen, 40, 20)
    res = analyze_player(games, p, SimulationConfig(n_sims=50, alpha=0.3), "Q")
    for k, est in res.estimates.items():
        assert res.significant(k) == (est.p_value < 0.3 and est.sample_size > 0)


@pytest.mark.parametrize("kwargs", [{"n_sims": 1}, {"alpha": 1.0}, {"k_values": (0,)}, {"t_test": "welch"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimulationConfig(**kwargs)
