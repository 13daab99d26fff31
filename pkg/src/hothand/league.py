"""League-level aggregation of per-player results."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import special, stats

from .errors import UndefinedSampleError
from .streak_tests import PlayerTestResult

REPORT_SCHEMA = "hothand-league-report"
REPORT_VERSION = 1
SUBSETS = ("significant", "all")


def binomial_meta_test(M: int, r: int, alpha: float) -> float:
    """Probability of at least ``r`` positives among ``M`` independent level-``alpha`` tests.

    Uses the identity ``P(X >= r) = I_alpha(r, M - r + 1)`` (regularised
    incomplete beta), which stays accurate deep in the upper tail where
    summing pmf terms or subtracting from one would not.
    """
    if M < 1 or r < 0:
        raise ValueError("need M >= 1 and r >= 0")
    if r > M:
        raise ValueError(f"r={r} exceeds the number of tests M={M}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if r == 0:
        return 1.0
    return float(special.betainc(r, M - r + 1, alpha))


def binomial_pmf(M: int, p: int, alpha: float) -> float:
    return float(stats.binom.pmf(p, M, alpha))


def weighted_effect_summary(results: Iterable[PlayerTestResult], k: int, subset: str = "significant") -> float:
    """Sample-size weighted mean adjusted effect for one k.

    ``subset="significant"`` keeps players significant at their alpha;
    ``"all"`` keeps every player with an estimate for k.
    """
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}")
    num = den = 0.0
    for res in results:
        est = res.estimates.get(k)
        if est is None or est.adjusted_effect is None:
            continue
        if subset == "significant" and not res.significant(k):
            continue
        num += est.adjusted_effect * est.sample_size
        den += est.sample_size
    if den <= 0:
        raise UndefinedSampleError(f"no {subset} players with a positive sample for k={k}")
    return num / den


@dataclass(frozen=True)
class LeagueRow:
    k: int
    n_players_tested: int
    n_significant: int
    meta_p: float
    weighted_hh_effect: float | None
    mean_sequence_length: float | None
    overall_adjusted_effect: float | None


@dataclass(frozen=True)
class LeagueReport:
    alpha: float
    length_subset: str
    rows: list[LeagueRow]

    def row(self, k: int) -> LeagueRow:
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(k)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": REPORT_SCHEMA,
                "schema_version": REPORT_VERSION,
                "alpha": self.alpha,
                "length_subset": self.length_subset,
                "rows": [asdict(r) for r in self.rows],
            },
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LeagueReport":
        d = json.loads(text)
        if d.get("schema") != REPORT_SCHEMA or d.get("schema_version") != REPORT_VERSION:
            raise ValueError("not a version-1 league report")
        return cls(d["alpha"], d["length_subset"], [LeagueRow(**r) for r in d["rows"]])

    def to_table(self) -> str:
        """Delimited rendering with the columns of a league summary table."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "hh_players", "adj_hh_effect", "mean_sequence_length", "overall_adj_effect",
                     "players_tested", "meta_p"])
        for r in self.rows:
            w.writerow([r.k, r.n_significant, _fmt(r.weighted_hh_effect), _fmt(r.mean_sequence_length),
                        _fmt(r.overall_adjusted_effect), r.n_players_tested, _fmt(r.meta_p)])
        return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _or_none(fn):
    try:
        return fn()
    except UndefinedSampleError:
        return None


def build_league_report(
    results: Sequence[PlayerTestResult],
    k_values: Iterable[int],
    alpha: float = 0.05,
    length_subset: str = "all",
) -> LeagueReport:
    """Per-k counts, meta-test probability and weighted effect summaries.

    A player counts as tested for k when it has a p-value for k. The mean
    sequence length is the mean conditional sample size over tested players
    (or over significant players with ``length_subset="significant"``).
    """
    if length_subset not in SUBSETS:
        raise ValueError(f"length_subset must be one of {SUBSETS}")
    rows = []
    for k in sorted(set(k_values)):
        tested = [res for res in results if k in res.estimates and res.estimates[k].p_value is not None]
        sig = [res for res in tested if res.significant(k)]
        pool = sig if length_subset == "significant" else tested
        lengths = [res.estimates[k].sample_size for res in pool]
        rows.append(
            LeagueRow(
                k=k,
                n_players_tested=len(tested),
                n_significant=len(sig),
                meta_p=binomial_meta_test(len(tested), len(sig), alpha) if tested else 1.0,
                weighted_hh_effect=_or_none(lambda: weighted_effect_summary(tested, k, "significant")),
                mean_sequence_length=float(np.mean(lengths)) if lengths else None,
                overall_adjusted_effect=_or_none(lambda: weighted_effect_summary(tested, k, "all")),
            )
        )
    return LeagueReport(alpha, length_subset, rows)
