"""Shot-log ingestion: parsing, validation, game filtering and player qualification.

The on-disk format is a UTF-8 comma-delimited table with the header::

    season,game_id,player_id,order_in_game,outcome,dist_basket,defender_dist,touch_time,dribbles,shot_type,defender_id

An empty cell means the value is missing. Files written by this package may
carry extra trailing columns (``p`` for probability files); readers ask for
them explicitly.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

COLUMNS = (
    "season",
    "game_id",
    "player_id",
    "order_in_game",
    "outcome",
    "dist_basket",
    "defender_dist",
    "touch_time",
    "dribbles",
    "shot_type",
    "defender_id",
)

FEATURE_COLUMNS = ("dist_basket", "defender_dist", "touch_time", "dribbles", "shot_type", "defender_id")
DEFAULT_REQUIRED_FEATURES = frozenset({"dist_basket", "defender_dist", "touch_time", "dribbles", "shot_type"})

_FLOAT_COLUMNS = ("dist_basket", "defender_dist", "touch_time")


class ShotLogError(ValueError):
    """Base class for shot-log problems; carries the offending location."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ShotLogParseError(ShotLogError):
    pass


class ShotLogValidationError(ShotLogError):
    pass


@dataclass(frozen=True, slots=True)
class ShotRecord:
    season: str
    game_id: str
    player_id: str
    order_in_game: int
    outcome: int
    dist_basket: float | None = None
    defender_dist: float | None = None
    touch_time: float | None = None
    dribbles: int | None = None
    shot_type: str | None = None
    defender_id: str | None = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.player_id, self.game_id, self.order_in_game)

    def has_features(self, names: Iterable[str]) -> bool:
        return all(getattr(self, name) is not None for name in names)


@dataclass(frozen=True)
class GameSequence:
    """One player's shots in one game, ordered by ``order_in_game``."""

    player_id: str
    game_id: str
    records: tuple[ShotRecord, ...]
    outcomes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        for rec in records:
            if rec.player_id != self.player_id or rec.game_id != self.game_id:
                raise ValueError(
                    f"record {rec.key} does not belong to game ({self.player_id}, {self.game_id})"
                )
        orders = [rec.order_in_game for rec in records]
        if orders != sorted(orders):
            raise ValueError(f"records of game {self.game_id} are not ordered by order_in_game")
        outcomes = np.fromiter((rec.outcome for rec in records), dtype=np.int8, count=len(records))
        outcomes.flags.writeable = False
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "outcomes", outcomes)

    @classmethod
    def from_outcomes(cls, outcomes, player_id: str = "P", game_id: str = "G", season: str = "") -> "GameSequence":
        """Build a feature-less game from a 0/1 sequence or an ``"MXM..."`` string."""
        values = [1 if c in ("M", "m") else 0 for c in outcomes] if isinstance(outcomes, str) else [int(v) for v in outcomes]
        records = tuple(
            ShotRecord(season=season, game_id=game_id, player_id=player_id, order_in_game=i, outcome=v)
            for i, v in enumerate(values)
        )
        return cls(player_id, game_id, records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def season(self) -> str:
        return self.records[0].season if self.records else ""

    def as_string(self) -> str:
        return "".join("M" if v else "X" for v in self.outcomes)


@dataclass(frozen=True)
class PlayerDataset:
    player_id: str
    games: tuple[GameSequence, ...]

    def __post_init__(self):
        object.__setattr__(self, "games", tuple(self.games))

    @property
    def total_shots(self) -> int:
        return sum(len(g) for g in self.games)

    def records(self) -> Iterator[ShotRecord]:
        for game in self.games:
            yield from game.records


# --------------------------------------------------------------------------
# parsing / writing


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary file-like
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _parse_float(text: str, line: int, column: str) -> float | None:
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ShotLogParseError(f"not a number: {text!r}", line, column) from None
    if not math.isfinite(value):
        raise ShotLogValidationError(f"non-finite value {text!r}", line, column)
    if value < 0:
        raise ShotLogValidationError(f"negative value {text!r}", line, column)
    return value


def _parse_int(text: str, line: int, column: str) -> int | None:
    if text == "":
        return None
    try:
        value = int(text)
    except ValueError:
        raise ShotLogParseError(f"not an integer: {text!r}", line, column) from None
    if value < 0:
        raise ShotLogValidationError(f"negative value {text!r}", line, column)
    return value


def iter_rows(source, extra_columns: Sequence[str] = ()) -> Iterator[tuple[int, dict[str, str]]]:
    """Yield ``(line_number, cells)`` for each data row after checking the header."""
    stream, owned = _open_text(source)
    try:
        reader = csv.reader(stream)
        expected = list(COLUMNS) + list(extra_columns)
        try:
            header = next(reader)
        except StopIteration:
            raise ShotLogParseError("empty file, missing header", 1) from None
        if header and header[0].startswith("﻿"):
            header[0] = header[0][1:]
        if header != expected:
            raise ShotLogParseError(f"bad header {header}, expected {expected}", 1)
        for cells in reader:
            line = reader.line_num
            if not cells:
                continue
            if len(cells) != len(expected):
                raise ShotLogParseError(f"row has {len(cells)} cells, expected {len(expected)}", line)
            yield line, dict(zip(expected, (c.strip() for c in cells)))
    finally:
        if owned:
            stream.close()


def _record_from_cells(line: int, cells: dict[str, str]) -> ShotRecord:
    for col in ("season", "game_id", "player_id", "outcome"):
        if cells[col] == "":
            raise ShotLogParseError("required cell is empty", line, col)
    try:
        outcome = int(cells["outcome"])
    except ValueError:
        raise ShotLogParseError(f"not an integer: {cells['outcome']!r}", line, "outcome") from None
    if outcome not in (0, 1):
        raise ShotLogValidationError(f"outcome must be 0 or 1, got {outcome}", line, "outcome")
    order = _parse_int(cells["order_in_game"], line, "order_in_game")
    return ShotRecord(
        season=cells["season"],
        game_id=cells["game_id"],
        player_id=cells["player_id"],
        order_in_game=-1 if order is None else order,
        outcome=outcome,
        dist_basket=_parse_float(cells["dist_basket"], line, "dist_basket"),
        defender_dist=_parse_float(cells["defender_dist"], line, "defender_dist"),
        touch_time=_parse_float(cells["touch_time"], line, "touch_time"),
        dribbles=_parse_int(cells["dribbles"], line, "dribbles"),
        shot_type=cells["shot_type"] or None,
        defender_id=cells["defender_id"] or None,
    )


def parse_rows(source, extra_columns: Sequence[str] = ()) -> list[tuple[ShotRecord, dict[str, str]]]:
    """Parse a shot log, returning each record with its extra (unparsed) cells.

    Rows with an empty ``order_in_game`` get their row position within the
    (player, game) group; a group may not mix explicit and implicit order.
    """
    parsed: list[tuple[int, ShotRecord, dict[str, str]]] = []
    for line, cells in iter_rows(source, extra_columns):
        rec = _record_from_cells(line, cells)
        parsed.append((line, rec, {c: cells[c] for c in extra_columns}))

    implicit: dict[tuple[str, str], list[int]] = {}
    explicit: set[tuple[str, str]] = set()
    for idx, (line, rec, _) in enumerate(parsed):
        group = (rec.player_id, rec.game_id)
        if rec.order_in_game < 0:
            implicit.setdefault(group, []).append(idx)
        else:
            explicit.add(group)
    for group, indices in implicit.items():
        if group in explicit:
            line = parsed[indices[0]][0]
            raise ShotLogValidationError(
                f"game {group[1]} of player {group[0]} mixes explicit and empty order_in_game", line, "order_in_game"
            )
        for pos, idx in enumerate(indices):
            line, rec, extra = parsed[idx]
            parsed[idx] = (line, replace(rec, order_in_game=pos), extra)

    seen: dict[tuple[str, str, int], int] = {}
    for line, rec, _ in parsed:
        if rec.key in seen:
            raise ShotLogValidationError(
                f"duplicate shot (player {rec.player_id}, game {rec.game_id}, order {rec.order_in_game}); "
                f"first seen on line {seen[rec.key]}",
                line,
                "order_in_game",
            )
        seen[rec.key] = line
    return [(rec, extra) for _, rec, extra in parsed]


def parse_shot_log(source) -> list[ShotRecord]:
    """Parse a shot-log table into records, preserving row order.

    ``source`` may be a path, raw bytes, a binary stream or a text stream.
    Raises :class:`ShotLogParseError` for malformed cells and
    :class:`ShotLogValidationError` for domain violations (bad outcome,
    duplicate shot keys).
    """
    return [rec for rec, _ in parse_rows(source)]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_shot_log(records: Iterable[ShotRecord], dest, extra: dict[str, Sequence] | None = None) -> None:
    """Write records in the shot-log schema; ``extra`` adds trailing columns."""
    extra = extra or {}
    records = list(records)
    for name, values in extra.items():
        if len(values) != len(records):
            raise ValueError(f"extra column {name!r} has {len(values)} values for {len(records)} records")
    owned = isinstance(dest, (str, os.PathLike))
    stream = open(dest, "w", encoding="utf-8", newline="") if owned else dest
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(list(COLUMNS) + list(extra))
        for i, rec in enumerate(records):
            row = [_fmt(getattr(rec, col)) for col in COLUMNS]
            row += [_fmt(values[i]) for values in extra.values()]
            writer.writerow(row)
    finally:
        if owned:
            stream.close()


# --------------------------------------------------------------------------
# grouping and filtering


def build_datasets(records: Iterable[ShotRecord]) -> list[PlayerDataset]:
    """Group records into per-player datasets of per-game sequences.

    Players and games keep their order of first appearance; shots within a
    game are sorted by ``order_in_game``, which must be gap-free after sorting.
    """
    players: dict[str, dict[str, list[ShotRecord]]] = {}
    for rec in records:
        players.setdefault(rec.player_id, {}).setdefault(rec.game_id, []).append(rec)
    datasets = []
    for pid, games in players.items():
        seqs = []
        for gid, recs in games.items():
            recs.sort(key=lambda r: r.order_in_game)
            orders = [r.order_in_game for r in recs]
            if len(set(orders)) != len(orders):
                raise ShotLogValidationError(f"duplicate order_in_game in game {gid} of player {pid}")
            if orders[-1] - orders[0] != len(orders) - 1:
                raise ShotLogValidationError(
                    f"order_in_game of game {gid} of player {pid} has gaps ({orders[0]}..{orders[-1]} "
                    f"for {len(orders)} shots)"
                )
            seqs.append(GameSequence(pid, gid, tuple(recs)))
        datasets.append(PlayerDataset(pid, tuple(seqs)))
    return datasets


def filter_complete_games(dataset: PlayerDataset, required_features=DEFAULT_REQUIRED_FEATURES) -> PlayerDataset:
    """Drop every game in which any shot lacks one of ``required_features``.

    A single unusable shot breaks the sequence, so the whole game goes.
    """
    unknown = set(required_features) - set(FEATURE_COLUMNS)
    if unknown:
        raise ValueError(f"unknown feature names: {sorted(unknown)}")
    kept = tuple(g for g in dataset.games if all(r.has_features(required_features) for r in g.records))
    if len(kept) == len(dataset.games):
        return dataset
    return PlayerDataset(dataset.player_id, kept)


def qualify_players(datasets: Iterable[PlayerDataset], min_shots: int) -> list[PlayerDataset]:
    if min_shots < 0:
        raise ValueError("min_shots must be non-negative")
    return [d for d in datasets if d.total_shots >= min_shots]


def load_players(
    source, required_features=DEFAULT_REQUIRED_FEATURES, min_shots: int = 0
) -> list[PlayerDataset]:
    """Parse, filter incomplete games, then apply the shot threshold."""
    datasets = build_datasets(parse_shot_log(source))
    return qualify_players((filter_complete_games(d, required_features) for d in datasets), min_shots)
