"""Per-shot make probabilities: logistic baseline, LOSO cross-fitting, calibration.

The model is an L2-regularised logistic regression on standardised numeric
features and one-hot categorical features, fitted by full-batch gradient
descent with backtracking and early stopping on a held-out validation split.
Probabilities can also come from an external file (see
:func:`read_probabilities`), in which case no model is trained here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import sparse, special

from .shotlog import GameSequence, ShotLogValidationError, ShotRecord, parse_rows, write_shot_log

MODEL_FORMAT = "hothand-logistic"
MODEL_VERSION = 1

NUMERIC_FEATURES = ("dist_basket", "defender_dist", "touch_time", "dribbles")
CATEGORICAL_FEATURES = ("shot_type", "player_id", "defender_id")
UNKNOWN = "<unknown>"


class TrainingError(ValueError):
    pass


class MissingProbabilityError(KeyError):
    def __init__(self, key: tuple[str, str, int]):
        self.key = key
        super().__init__(f"no probability for player {key[0]}, game {key[1]}, order {key[2]}")


@dataclass(frozen=True)
class TrainConfig:
    validation_fraction: float = 0.2
    patience: int = 5
    max_epochs: int = 500
    l2: float = 1e-4
    step_size: float | None = None  # None: 1 / (Lipschitz estimate)
    tol: float = 1e-9
    seed: int = 0
    numeric: tuple[str, ...] = NUMERIC_FEATURES
    categorical: tuple[str, ...] = CATEGORICAL_FEATURES

    def __post_init__(self):
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass
class FeatureEncoder:
    numeric: tuple[str, ...]
    categorical: tuple[str, ...]
    means: list[float] = field(default_factory=list)
    scales: list[float] = field(default_factory=list)
    vocab: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def fit(cls, records: Sequence[ShotRecord], numeric=NUMERIC_FEATURES, categorical=CATEGORICAL_FEATURES):
        enc = cls(tuple(numeric), tuple(categorical))
        raw = enc._numeric_matrix(records)
        enc.means = raw.mean(axis=0).tolist() if len(records) else [0.0] * len(enc.numeric)
        sd = raw.std(axis=0) if len(records) else np.ones(len(enc.numeric))
        enc.scales = [float(s) if s > 0 else 1.0 for s in sd]
        for name in enc.categorical:
            values = sorted({str(getattr(r, name)) for r in records if getattr(r, name) is not None})
            enc.vocab[name] = [UNKNOWN] + values
        return enc

    @property
    def n_features(self) -> int:
        return len(self.numeric) + sum(len(v) for v in self.vocab.values())

    def feature_names(self) -> list[str]:
        names = list(self.numeric)
        for name in self.categorical:
            names += [f"{name}={v}" for v in self.vocab[name]]
        return names

    def _numeric_matrix(self, records) -> np.ndarray:
        out = np.empty((len(records), len(self.numeric)))
        for i, rec in enumerate(records):
            for j, name in enumerate(self.numeric):
                v = getattr(rec, name)
                out[i, j] = math.nan if v is None else float(v)
        return out

    def transform(self, records: Sequence[ShotRecord]) -> sparse.csr_matrix:
        """Encode records; unseen categories land in each feature's unknown slot."""
        n = len(records)
        num = (self._numeric_matrix(records) - np.asarray(self.means)) / np.asarray(self.scales)
        if not np.all(np.isfinite(num)):
            bad = int(np.argwhere(~np.isfinite(num))[0][0])
            raise ShotLogValidationError(f"non-finite encoded feature for shot {records[bad].key}")
        rows = [np.repeat(np.arange(n), len(self.numeric))]
        cols = [np.tile(np.arange(len(self.numeric)), n)]
        vals = [num.ravel()]
        offset = len(self.numeric)
        for name in self.categorical:
            index = {v: i for i, v in enumerate(self.vocab[name])}
            idx = np.fromiter((index.get(str(getattr(r, name)), 0) for r in records), dtype=np.int64, count=n)
            rows.append(np.arange(n))
            cols.append(offset + idx)
            vals.append(np.ones(n))
            offset += len(self.vocab[name])
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, offset)
        )

    def to_dict(self) -> dict:
        return {
            "numeric": list(self.numeric),
            "categorical": list(self.categorical),
            "means": self.means,
            "scales": self.scales,
            "vocab": self.vocab,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        return cls(tuple(d["numeric"]), tuple(d["categorical"]), list(d["means"]), list(d["scales"]),
                   {k: list(v) for k, v in d["vocab"].items()})


def logistic_loss(w: np.ndarray, b: float, X, y: np.ndarray, l2: float = 0.0) -> float:
    """Mean log-loss plus ``l2/2 * ||w||^2`` (bias unpenalised)."""
    z = X @ w + b
    # log(1 + e^z) - y z, computed without overflow
    loss = np.logaddexp(0.0, z) - y * z
    return float(loss.mean() + 0.5 * l2 * np.dot(w, w))


def logistic_grad(w: np.ndarray, b: float, X, y: np.ndarray, l2: float = 0.0) -> tuple[np.ndarray, float]:
    r = special.expit(X @ w + b) - y
    n = y.size
    return np.asarray(X.T @ r).ravel() / n + l2 * w, float(r.sum() / n)


def _lipschitz(X, n_iter: int = 50) -> float:
    """Upper-ish estimate of the largest eigenvalue of [X 1]^T [X 1] / n (power iteration)."""
    n, d = X.shape
    v = np.ones(d + 1) / math.sqrt(d + 1)
    lam = 1.0
    for _ in range(n_iter):
        u = X @ v[:d] + v[d]
        wv = np.concatenate([np.asarray(X.T @ u).ravel(), [u.sum()]]) / n
        lam = float(np.linalg.norm(wv))
        if lam == 0:
            return 1.0
        v = wv / lam
    return lam * 1.1


@dataclass
class CalibratedModel:
    encoder: FeatureEncoder
    weights: np.ndarray
    bias: float
    seasons: tuple[str, ...]
    seed: int
    train_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    validation_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    def decision_function(self, records: Sequence[ShotRecord]) -> np.ndarray:
        return self.encoder.transform(records) @ self.weights + self.bias

    def predict_proba(self, records: Sequence[ShotRecord]) -> np.ndarray:
        return special.expit(self.decision_function(records))

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "version": MODEL_VERSION,
                "seasons": list(self.seasons),
                "seed": self.seed,
                "bias": self.bias,
                "weights": self.weights.tolist(),
                "feature_names": self.encoder.feature_names(),
                "encoding": self.encoder.to_dict(),
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibratedModel":
        d = json.loads(text)
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model file (format={d.get('format')}, version={d.get('version')})")
        enc = FeatureEncoder.from_dict(d["encoding"])
        w = np.asarray(d["weights"], dtype=float)
        if w.size != enc.n_features:
            raise ValueError("weight vector does not match the encoding")
        return cls(enc, w, float(d["bias"]), tuple(d["seasons"]), int(d["seed"]))


def train(records: Sequence[ShotRecord], config: TrainConfig = TrainConfig()) -> CalibratedModel:
    """Fit the logistic baseline with early stopping.

    A ``validation_fraction`` share of shots (chosen with ``config.seed``) is
    held out; training stops once validation loss has not improved for
    ``patience`` consecutive epochs, and the best-validation weights are
    returned. Each step uses backtracking, so the training loss never goes up.
    """
    records = list(records)
    y_all = np.fromiter((r.outcome for r in records), dtype=float, count=len(records))
    if len(set(y_all.tolist())) < 2:
        raise TrainingError("training data must contain both makes and misses")

    gen = np.random.default_rng(config.seed)
    n_val = int(round(config.validation_fraction * len(records)))
    order = gen.permutation(len(records))
    val_idx, fit_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    fit_recs = [records[i] for i in fit_idx]
    if len(set(y_all[fit_idx].tolist())) < 2:
        raise TrainingError("training split lost a class; lower validation_fraction")

    enc = FeatureEncoder.fit(fit_recs, config.numeric, config.categorical)
    X = enc.transform(fit_recs)
    y = y_all[fit_idx]
    Xv = enc.transform([records[i] for i in val_idx]) if n_val else None
    yv = y_all[val_idx]

    w = np.zeros(X.shape[1])
    b = 0.0
    step = config.step_size or 1.0 / (0.25 * _lipschitz(X) + config.l2)
    loss = logistic_loss(w, b, X, y, config.l2)
    history = [loss]
    val_history: list[float] = []
    best = (math.inf, w.copy(), b)
    stale = 0
    for _ in range(config.max_epochs):
        gw, gb = logistic_grad(w, b, X, y, config.l2)
        gnorm2 = float(np.dot(gw, gw) + gb * gb)
        if gnorm2 < config.tol**2:
            break
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss = logistic_loss(w_new, b_new, X, y, config.l2)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        w, b, loss = w_new, b_new, new_loss
        history.append(loss)
        if Xv is not None:
            vloss = logistic_loss(w, b, Xv, yv, 0.0)
            val_history.append(vloss)
            if vloss < best[0] - 1e-12:
                best, stale = (vloss, w.copy(), b), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if Xv is not None and best[0] < math.inf:
        w, b = best[1], best[2]
    seasons = tuple(sorted({r.season for r in records}))
    return CalibratedModel(enc, w, float(b), seasons, config.seed, history, val_history, val_idx)


# --------------------------------------------------------------------------
# probability vectors


@dataclass(frozen=True)
class ProbabilityVector:
    """Make probabilities keyed by (player_id, game_id, order_in_game).

    ``provenance`` names the training seasons behind each value (``"external"``
    for supplied files).
    """

    keys: tuple[tuple[str, str, int], ...]
    values: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not (len(self.keys) == values.size == len(self.provenance)):
            raise ValueError("keys, values and provenance must have equal length")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.keys)})

    def __len__(self) -> int:
        return self.values.size

    def lookup(self, key) -> float:
        try:
            return float(self.values[self._index[key]])
        except KeyError:
            raise MissingProbabilityError(key) from None

    def align(self, games: Iterable[GameSequence]) -> np.ndarray:
        """Probabilities in the shot order of ``games``."""
        out = []
        for game in games:
            for rec in game.records:
                out.append(self.lookup(rec.key))
        return np.asarray(out, dtype=float)


def predict_loso(records: Sequence[ShotRecord], config: TrainConfig = TrainConfig()) -> ProbabilityVector:
    """Leave-one-season-out predictions, one per record in input order.

    Each season is scored by a model fitted on every other season, so no shot
    is ever predicted by a model that saw it.
    """
    records = list(records)
    seasons = sorted({r.season for r in records})
    if len(seasons) < 2:
        raise TrainingError(
            "leave-one-season-out needs at least 2 seasons; use a plain train/test split for single-season data"
        )
    values = np.empty(len(records))
    provenance = [""] * len(records)
    for season in seasons:
        held = [i for i, r in enumerate(records) if r.season == season]
        model = train([r for r in records if r.season != season], config)
        values[held] = model.predict_proba([records[i] for i in held])
        tag = "|".join(model.seasons)
        for i in held:
            provenance[i] = tag
    return ProbabilityVector(tuple(r.key for r in records), values, tuple(provenance))


def read_probabilities(source) -> tuple[list[ShotRecord], ProbabilityVector]:
    """Read a shot log with a trailing ``p`` column."""
    rows = parse_rows(source, extra_columns=("p",))
    records = [rec for rec, _ in rows]
    values = []
    for rec, extra in rows:
        try:
            p = float(extra["p"])
        except ValueError:
            raise ShotLogValidationError(f"bad probability {extra['p']!r} for shot {rec.key}", column="p") from None
        if not 0.0 <= p <= 1.0:
            raise ShotLogValidationError(f"probability {p} outside [0, 1] for shot {rec.key}", column="p")
        values.append(p)
    return records, ProbabilityVector(tuple(r.key for r in records), np.asarray(values), ("external",) * len(records))


def write_probabilities(records: Sequence[ShotRecord], probabilities: ProbabilityVector | Sequence[float], dest):
    if isinstance(probabilities, ProbabilityVector):
        values = [probabilities.lookup(r.key) for r in records]
    else:
        values = [float(v) for v in probabilities]
    write_shot_log(records, dest, extra={"p": values})


# --------------------------------------------------------------------------
# calibration


class CalibrationBin(NamedTuple):
    lower: float
    upper: float
    predicted_mean: float
    observed_rate: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    bins: list[CalibrationBin]
    accuracy: float

    @property
    def n(self) -> int:
        return sum(b.count for b in self.bins)

    def to_csv(self) -> str:
        lines = ["bin_lower,bin_upper,predicted,observed,count"]
        for b in self.bins:
            lines.append(f"{b.lower!r},{b.upper!r},{b.predicted_mean!r},{b.observed_rate!r},{b.count}")
        return "\n".join(lines) + "\n"


def reliability_curve(predictions, outcomes, n_bins: int = 10) -> CalibrationReport:
    """Bin predictions into ``n_bins`` equal-width bins over [0, 1].

    Each populated bin reports its mean prediction and the observed make
    fraction; the last bin is closed so that p = 1 is counted. Accuracy uses a
    0.5 threshold.
    """
    p = np.asarray(getattr(predictions, "values", predictions), dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions for {y.size} outcomes")
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    idx = np.minimum((p * n_bins).astype(int), n_bins - 1)
    bins = []
    for i in range(n_bins):
        mask = idx == i
        count = int(mask.sum())
        if count:
            bins.append(CalibrationBin(i / n_bins, (i + 1) / n_bins, float(p[mask].mean()), float(y[mask].mean()), count))
    accuracy = float(((p >= 0.5) == (y == 1)).mean()) if y.size else math.nan
    return CalibrationReport(bins, accuracy)
