"""Synthetic shooters, exact selection-bias oracle and rejection-rate studies."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import rng
from .errors import InsufficientDataError, UndefinedSampleError
from .shotlog import GameSequence, PlayerDataset, ShotRecord
from .streakstats import conditional_sample
from .streak_tests import SimulationConfig, analyze_player, permutation_test

SHOT_TYPES = ("jump", "layup", "hook", "dunk")
SEASONS = ("S1", "S2")


@dataclass(frozen=True)
class ConstantLaw:
    p: float = 0.5

    def draw(self, gen: np.random.Generator, n_games: int, n_shots: int) -> np.ndarray:
        return np.full((n_games, n_shots), float(self.p))


@dataclass(frozen=True)
class UniformLaw:
    """Shot probabilities with ``U(low, high)`` marginals.

    ``autocorr`` sets the lag-1 correlation of a latent Gaussian AR(1) chain
    inside each game, mapped through the normal CDF. ``autocorr=0`` gives
    i.i.d. uniform draws; negative values make easy and hard looks alternate.
    """

    low: float = 0.3
    high: float = 0.7
    autocorr: float = 0.0

    def draw(self, gen: np.random.Generator, n_games: int, n_shots: int) -> np.ndarray:
        if not -1.0 < self.autocorr < 1.0:
            raise ValueError("autocorr must lie in (-1, 1)")
        if self.autocorr == 0.0:
            u = gen.random((n_games, n_shots))
        else:
            noise = gen.standard_normal((n_games, n_shots))
            z = np.empty_like(noise)
            z[:, 0] = noise[:, 0]
            scale = math.sqrt(1.0 - self.autocorr**2)
            for j in range(1, n_shots):
                z[:, j] = self.autocorr * z[:, j - 1] + scale * noise[:, j]
            u = special.ndtr(z)
        return self.low + (self.high - self.low) * u


@dataclass(frozen=True)
class HotHand:
    delta: float
    k_trigger: int = 1


@dataclass(frozen=True)
class GeneratorSpec:
    n_shots: int = 20
    n_games: int = 50
    law: ConstantLaw | UniformLaw = field(default_factory=UniformLaw)
    hot_hand: HotHand | None = None
    seed: int = 0

    def describe(self) -> dict:
        d = {"n_shots": self.n_shots, "n_games": self.n_games, "law": type(self.law).__name__}
        d.update({f"law_{k}": v for k, v in asdict(self.law).items()})
        d["delta"] = self.hot_hand.delta if self.hot_hand else 0.0
        d["k_trigger"] = self.hot_hand.k_trigger if self.hot_hand else 0
        return d


@dataclass(frozen=True)
class SyntheticPlayer:
    dataset: PlayerDataset
    probabilities: np.ndarray  # base p_i, what a shot-quality model would see
    effective: np.ndarray  # p_i after any hot-hand boost

    @property
    def player_id(self) -> str:
        return self.dataset.player_id


def _feature_records(gen, player_id, outcomes, p, n_games, n_shots) -> list[GameSequence]:
    # distance is linear in logit(p), so a logistic model on dist_basket can recover p
    logit = special.logit(np.clip(p, 1e-3, 1 - 1e-3))
    dist = np.maximum(0.0, 15.0 - 3.0 * logit)
    defender = gen.uniform(0.0, 8.0, size=p.shape)
    touch = gen.uniform(0.0, 6.0, size=p.shape)
    dribbles = gen.poisson(2.0, size=p.shape)
    shot_type = gen.integers(len(SHOT_TYPES), size=p.shape)
    defender_id = gen.integers(10, size=p.shape)
    games = []
    for g in range(n_games):
        gid = f"{player_id}-G{g:04d}"
        season = SEASONS[g % len(SEASONS)]
        recs = tuple(
            ShotRecord(
                season=season,
                game_id=gid,
                player_id=player_id,
                order_in_game=j,
                outcome=int(outcomes[g, j]),
                dist_basket=round(float(dist[g, j]), 6),
                defender_dist=round(float(defender[g, j]), 3),
                touch_time=round(float(touch[g, j]), 3),
                dribbles=int(dribbles[g, j]),
                shot_type=SHOT_TYPES[shot_type[g, j]],
                defender_id=f"D{defender_id[g, j]}",
            )
            for j in range(n_shots)
        )
        games.append(GameSequence(player_id, gid, recs))
    return games


def gen_sequences(spec: GeneratorSpec, player_id: str = "P0") -> SyntheticPlayer:
    """Generate one synthetic player's games.

    Outcomes are independent Bernoulli draws from the base probabilities,
    except that with ``hot_hand`` set, a shot whose previous ``k_trigger``
    same-game shots were all makes succeeds with ``clip(p_i + delta, 0, 1)``.
    The returned ``probabilities`` are always the base ``p_i``.
    """
    gen = rng.stream(spec.seed, "synth", player_id)
    base = np.clip(spec.law.draw(gen, spec.n_games, spec.n_shots), 0.0, 1.0)
    u = gen.random(base.shape)
    outcomes = np.zeros(base.shape, dtype=np.int8)
    effective = base.copy()
    hh = spec.hot_hand
    for j in range(spec.n_shots):
        if hh is not None and hh.delta != 0.0 and j >= hh.k_trigger:
            streak = outcomes[:, j - hh.k_trigger : j].all(axis=1)
            effective[:, j] = np.where(streak, np.clip(base[:, j] + hh.delta, 0.0, 1.0), base[:, j])
        outcomes[:, j] = u[:, j] < effective[:, j]
    games = _feature_records(rng.stream(spec.seed, "features", player_id), player_id, outcomes, base,
                             spec.n_games, spec.n_shots)
    return SyntheticPlayer(PlayerDataset(player_id, tuple(games)), base.ravel(), effective.ravel())


def gen_league(spec: GeneratorSpec, n_players: int, prefix: str = "P") -> list[SyntheticPlayer]:
    return [gen_sequences(spec, f"{prefix}{i:04d}") for i in range(n_players)]


# --------------------------------------------------------------------------
# exact oracle


def bias_oracle(n: int, n_makes: int, k: int) -> Fraction:
    """Exact mean conditional make rate after ``k`` makes over all arrangements.

    Every one of the C(n, n_makes) placements of the makes is enumerated and
    the per-sequence rate averaged uniformly; placements with no eligible shot
    are left out. Returned as an exact ``Fraction``.
    """
    if not 0 < n_makes < n:
        raise ValueError("need 0 < n_makes < n")
    if n > 20:
        raise ValueError(f"enumeration over n={n} shots is infeasible (limit 20)")
    if k < 1:
        raise ValueError("k must be positive")
    # counts[(makes_after, eligible)] = number of arrangements
    counts: dict[tuple[int, int], int] = {}
    for combo in itertools.combinations(range(n), n_makes):
        seq = [0] * n
        for i in combo:
            seq[i] = 1
        run = 0
        hits = trials = 0
        for x in seq:
            if run >= k:
                trials += 1
                hits += x
            run = run + 1 if x else 0
        if trials:
            counts[(hits, trials)] = counts.get((hits, trials), 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise UndefinedSampleError("no arrangement has an eligible shot")
    return sum((Fraction(h, t) * c for (h, t), c in counts.items()), Fraction(0)) / total


# --------------------------------------------------------------------------
# rejection-rate studies


TESTS = ("hetero", "permutation")


@dataclass(frozen=True)
class PlayerOutcome:
    player_id: str
    k: int
    tested: bool
    rejected: bool
    p_value: float | None
    raw_effect: float | None = None
    model_error: float | None = None
    adjusted_effect: float | None = None
    sample_size: int = 0


def shift_probabilities(shift: float) -> Callable[[np.ndarray], np.ndarray]:
    """Model stand-in that is off by a constant (clipped to [0, 1])."""
    def transform(p: np.ndarray) -> np.ndarray:
        return np.clip(p + shift, 0.0, 1.0)
    return transform


def _run_one(args) -> list[PlayerOutcome]:
    spec, player_id, test, config, n_perms, prob_shift = args
    player = gen_sequences(spec, player_id)
    games = player.dataset.games
    rows = []
    if test == "hetero":
        probs = np.clip(player.probabilities + prob_shift, 0.0, 1.0)
        result = analyze_player(games, probs, config, player_id)
        for k in config.k_values:
            est = result.estimates.get(k)
            if est is None:
                rows.append(PlayerOutcome(player_id, k, False, False, None))
            else:
                rows.append(PlayerOutcome(player_id, k, True, result.significant(k), est.p_value, est.raw_effect,
                                          est.model_error, est.adjusted_effect, est.sample_size))
    elif test == "permutation":
        for k in config.k_values:
            try:
                res = permutation_test(games, k, n_perms, config.master_seed, player_id)
            except (UndefinedSampleError, InsufficientDataError):
                rows.append(PlayerOutcome(player_id, k, False, False, None))
                continue
            mean_perm = float(np.nanmean(res.perm_rates))
            rows.append(PlayerOutcome(player_id, k, True, res.p < config.alpha, res.p,
                                      raw_effect=res.observed - mean_perm,
                                      sample_size=conditional_sample(games, k).sample_size))
    else:
        raise ValueError(f"unknown test {test!r}; expected one of {TESTS}")
    return rows


def run_players(
    spec: GeneratorSpec,
    n_players: int,
    test: str,
    config: SimulationConfig,
    n_perms: int = 200,
    prob_shift: float = 0.0,
    workers: int = 1,
    prefix: str = "P",
) -> list[PlayerOutcome]:
    """Generate ``n_players`` synthetic players and test each one.

    ``prob_shift`` perturbs the probabilities handed to the heterogeneous
    test, emulating a biased shot-quality model. Output order and values do
    not depend on ``workers``.
    """
    if test not in TESTS:
        raise ValueError(f"unknown test {test!r}; expected one of {TESTS}")
    jobs = [(spec, f"{prefix}{i:04d}", test, config, n_perms, prob_shift) for i in range(n_players)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        chunks = [_run_one(job) for job in jobs]
    return [row for chunk in chunks for row in chunk]


@dataclass(frozen=True)
class StudyRow:
    cell: dict
    test: str
    k: int
    n_players: int
    n_tested: int
    n_rejected: int
    rejection_rate: float
    mean_raw_effect: float | None
    mean_adjusted_effect: float | None


def summarize(cell: dict, test: str, outcomes: Sequence[PlayerOutcome], k_values) -> list[StudyRow]:
    rows = []
    for k in k_values:
        sub = [o for o in outcomes if o.k == k]
        tested = [o for o in sub if o.tested]
        n_rej = sum(o.rejected for o in tested)
        raw = [o.raw_effect for o in tested if o.raw_effect is not None]
        adj = [o.adjusted_effect for o in tested if o.adjusted_effect is not None]
        rows.append(StudyRow(
            cell=cell, test=test, k=k, n_players=len(sub), n_tested=len(tested), n_rejected=n_rej,
            rejection_rate=n_rej / len(tested) if tested else math.nan,
            mean_raw_effect=float(np.mean(raw)) if raw else None,
            mean_adjusted_effect=float(np.mean(adj)) if adj else None,
        ))
    return rows


def power_study(
    grid: Sequence[GeneratorSpec],
    tests: Sequence[str],
    n_repeats: int,
    config: SimulationConfig,
    n_perms: int = 200,
    prob_shift: float = 0.0,
    workers: int = 1,
) -> list[StudyRow]:
    """Rejection rate at ``config.alpha`` for every (grid cell, test, k).

    Each cell simulates ``n_repeats`` independent synthetic players; the same
    players are fed to every test. Deterministic given the specs' seeds and
    ``config.master_seed``.
    """
    rows = []
    for spec in grid:
        for test in tests:
            outcomes = run_players(spec, n_repeats, test, config, n_perms, prob_shift, workers)
            rows.extend(summarize(spec.describe(), test, outcomes, config.k_values))
    return rows
