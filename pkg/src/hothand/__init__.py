"""Streakiness tests for sequences of independent, non-identical binary trials."""

from .errors import DegenerateSequenceError, InsufficientDataError, UndefinedSampleError
from .league import LeagueReport, binomial_meta_test, build_league_report, weighted_effect_summary
from .probmodel import (
    CalibratedModel,
    CalibrationReport,
    ProbabilityVector,
    TrainConfig,
    predict_loso,
    read_probabilities,
    reliability_curve,
    train,
)
from .shotlog import (
    GameSequence,
    PlayerDataset,
    ShotRecord,
    build_datasets,
    filter_complete_games,
    parse_shot_log,
    qualify_players,
    write_shot_log,
)
from .streak_tests import (
    EffectEstimate,
    PlayerTestResult,
    SimulationConfig,
    adjusted_effect,
    analyze_player,
    hetero_bernoulli_test,
    model_error_estimate,
    permutation_test,
    player_significance,
)
from .streakstats import base_rate, conditional_make_rate, conditional_sample, runs_test

__version__ = "0.1.0"
