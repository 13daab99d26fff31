"""Conditional samples after streaks of makes, and classical sequence statistics.

Outcomes are coded 1 = make (M), 0 = miss (X). Functions accept
:class:`~hothand.shotlog.GameSequence` objects, ``"MXM"`` strings or 0/1
iterables wherever a game is expected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy import stats

from .errors import DegenerateSequenceError
from .shotlog import GameSequence


def as_outcomes(game) -> np.ndarray:
    if isinstance(game, GameSequence):
        return np.asarray(game.outcomes, dtype=np.int8)
    if isinstance(game, str):
        bad = set(game) - set("MXmx")
        if bad:
            raise ValueError(f"outcome string may contain only M and X, got {sorted(bad)}")
        return np.array([c in "Mm" for c in game], dtype=np.int8)
    arr = np.asarray(list(game) if not isinstance(game, np.ndarray) else game)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("outcomes must be 0/1")
    return arr.astype(np.int8)


def flatten_games(games: Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate games into one outcome vector plus each shot's game-local position."""
    arrays = [as_outcomes(g) for g in games]
    if not arrays:
        return np.zeros(0, dtype=np.int8), np.zeros(0, dtype=np.int64)
    outcomes = np.concatenate(arrays)
    positions = np.concatenate([np.arange(len(a)) for a in arrays])
    return outcomes, positions


def eligibility(outcomes: np.ndarray, positions: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of shots preceded by ``k`` straight makes in the same game.

    ``outcomes`` may be 1-D or 2-D (replicates along axis 0); ``positions`` is
    the shared 1-D game-local index. Requiring ``position >= k`` keeps the
    look-back window inside the shot's own game.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    outcomes = np.asarray(outcomes)
    n = outcomes.shape[-1]
    csum = np.zeros(outcomes.shape[:-1] + (n + 1,), dtype=np.int32)
    np.cumsum(outcomes, axis=-1, out=csum[..., 1:])
    mask = np.zeros(outcomes.shape, dtype=bool)
    if n <= k:
        return mask
    window = csum[..., k:n] - csum[..., : n - k]
    mask[..., k:] = (window == k) & (positions[k:] >= k)
    return mask


def conditional_counts(outcomes: np.ndarray, positions: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (makes, eligible) counts along the last axis."""
    mask = eligibility(outcomes, positions, k)
    eligible = mask.sum(axis=-1)
    makes = (mask & (np.asarray(outcomes) == 1)).sum(axis=-1)
    return makes, eligible


def conditional_rates(outcomes: np.ndarray, positions: np.ndarray, k: int) -> np.ndarray:
    """Vectorised conditional make rate; NaN marks rows with no eligible shot."""
    makes, eligible = conditional_counts(outcomes, positions, k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(eligible > 0, makes / np.maximum(eligible, 1), np.nan)


@dataclass(frozen=True)
class ConditionalSample:
    k: int
    eligible_outcomes: np.ndarray
    game_indices: np.ndarray
    eligible_indices: np.ndarray  # game-local positions

    @property
    def sample_size(self) -> int:
        return int(self.eligible_outcomes.size)


def conditional_sample(games: Iterable, k: int) -> ConditionalSample:
    """Collect the shots taken right after at least ``k`` consecutive same-game makes.

    A shot following ``k + 1`` straight makes is also eligible for ``k``.
    Results are listed in (game, position) order.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    arrays = [as_outcomes(g) for g in games]
    outcomes, positions = flatten_games(arrays)
    game_of = np.repeat(np.arange(len(arrays)), [len(a) for a in arrays]) if arrays else np.zeros(0, dtype=np.int64)
    mask = eligibility(outcomes, positions, k)
    return ConditionalSample(
        k=k,
        eligible_outcomes=outcomes[mask],
        game_indices=game_of[mask],
        eligible_indices=positions[mask],
    )


def conditional_make_rate(sample: ConditionalSample) -> float | None:
    """Fraction of makes in the sample, or ``None`` when the sample is empty."""
    if sample.sample_size == 0:
        return None
    return float(sample.eligible_outcomes.mean())


def base_rate(games: Iterable) -> float:
    outcomes, _ = flatten_games(games)
    if outcomes.size == 0:
        raise ValueError("base rate of an empty set of shots is undefined")
    return float(outcomes.mean())


class RunsResult(NamedTuple):
    runs: int
    expected: float
    variance: float
    z: float
    p_one_sided: float


def runs_test(outcomes) -> RunsResult:
    """Wald-Wolfowitz runs test, one-sided towards streakiness.

    Fewer runs than expected means makes and misses cluster, so the p-value is
    the lower normal tail ``Phi(z)``. No continuity correction is applied.
    """
    x = as_outcomes(outcomes)
    n1 = int(x.sum())
    n2 = int(x.size - n1)
    if n1 == 0 or n2 == 0:
        raise DegenerateSequenceError("runs test needs at least one make and one miss")
    n = n1 + n2
    runs = 1 + int(np.count_nonzero(x[1:] != x[:-1]))
    expected = 2.0 * n1 * n2 / n + 1.0
    variance = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n**2 * (n - 1.0))
    z = (runs - expected) / np.sqrt(variance) if variance > 0 else 0.0
    return RunsResult(runs, expected, variance, float(z), float(stats.norm.cdf(z)))
