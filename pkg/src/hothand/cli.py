"""Command-line entry point: ``hothand <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import league, probmodel, shotlog, synthlab
from .streak_tests import T_TEST_METHODS, SimulationConfig, analyze_player

log = logging.getLogger("hothand")

RESULTS_MAGIC = "#hothand-results,v1"
RESULT_COLUMNS = ("player_id", "k", "n", "observed", "sim_mean", "e", "epsilon", "adj_e", "p", "significant")


class CLIError(Exception):
    pass


def _k_list(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


# --------------------------------------------------------------------------
# shared loading


def _load_inputs(args) -> tuple[list[shotlog.ShotRecord], probmodel.ProbabilityVector | None]:
    probs = None
    if args.probs_file:
        prob_records, probs = probmodel.read_probabilities(args.probs_file)
        records = shotlog.parse_shot_log(args.input) if args.input else prob_records
    elif args.input:
        records = shotlog.parse_shot_log(args.input)
    else:
        raise CLIError("give --input and/or --probs-file")
    return records, probs


def _usable_players(records, required, min_shots):
    datasets = [shotlog.filter_complete_games(d, required) for d in shotlog.build_datasets(records)]
    usable = [r for d in datasets for r in d.records()]
    return usable, shotlog.qualify_players(datasets, min_shots)


def _train_config(args) -> probmodel.TrainConfig:
    return probmodel.TrainConfig(
        validation_fraction=args.val_fraction,
        patience=args.patience,
        max_epochs=args.max_epochs,
        l2=args.l2,
        seed=args.seed,
    )


def _analyze_job(job):
    player_id, games, p, config = job
    return analyze_player(games, p, config, player_id)


# --------------------------------------------------------------------------
# subcommands


def cmd_analyze(args) -> int:
    records, probs = _load_inputs(args)
    usable, players = _usable_players(records, args.required_features, args.min_shots)
    log.info("%d usable shots, %d qualified players", len(usable), len(players))
    if probs is None:
        log.info("training leave-one-season-out models")
        probs = probmodel.predict_loso(usable, _train_config(args))

    config = SimulationConfig(n_sims=args.sims, master_seed=args.seed, k_values=args.k, alpha=args.alpha,
                              t_test=args.t_test)
    jobs = []
    for d in players:
        try:
            p = probs.align(d.games)
        except probmodel.MissingProbabilityError as exc:
            raise CLIError(str(exc)) from None
        jobs.append((d.player_id, d.games, p, config))

    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_analyze_job, jobs))
    else:
        results = [_analyze_job(job) for job in jobs]

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(RESULTS_MAGIC + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for res in results:
            for k in config.k_values:
                est = res.estimates.get(k)
                if est is None:
                    w.writerow([res.player_id, k, 0, "", "", "", "", "", "", 0])
                    continue
                w.writerow([res.player_id, k, est.sample_size, _fmt(est.observed_rate), _fmt(est.sim_mean),
                            _fmt(est.raw_effect), _fmt(est.model_error), _fmt(est.adjusted_effect),
                            _fmt(est.p_value), int(res.significant(k))])
    report = league.build_league_report(results, config.k_values, config.alpha, args.length_subset)
    (out / "league.json").write_text(report.to_json(), encoding="utf-8")
    (out / "league.csv").write_text(report.to_table(), encoding="utf-8")
    sys.stdout.write(report.to_table())
    return 0


def cmd_train_model(args) -> int:
    records = shotlog.parse_shot_log(args.input)
    usable, _ = _usable_players(records, args.required_features, 0)
    cfg = _train_config(args)
    model = probmodel.train(usable, cfg)
    Path(args.output).write_text(model.to_json(), encoding="utf-8")
    seasons = {r.season for r in usable}
    if len(seasons) >= 2:
        preds = probmodel.predict_loso(usable, cfg)
        outcomes = [r.outcome for r in usable]
        source = "leave-one-season-out"
    else:
        val = model.validation_index
        held = [usable[i] for i in val]
        preds = model.predict_proba(held)
        outcomes = [r.outcome for r in held]
        source = "validation split"
    report = probmodel.reliability_curve(preds, outcomes, args.bins)
    if args.calibration_out:
        Path(args.calibration_out).write_text(report.to_csv(), encoding="utf-8")
    print(f"model written to {args.output}; {source} accuracy {report.accuracy:.4f} on {report.n} shots")
    return 0


def cmd_calibrate(args) -> int:
    records, probs = _load_inputs(args)
    usable, _ = _usable_players(records, args.required_features, 0)
    if probs is None:
        probs = probmodel.predict_loso(usable, _train_config(args))
    try:
        p = np.array([probs.lookup(r.key) for r in usable])
    except probmodel.MissingProbabilityError as exc:
        raise CLIError(str(exc)) from None
    report = probmodel.reliability_curve(p, [r.outcome for r in usable], args.bins)
    text = report.to_csv()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"accuracy {report.accuracy:.4f} on {report.n} shots", file=sys.stderr)
    return 0


def _spec_grid(args) -> list[synthlab.GeneratorSpec]:
    law = synthlab.UniformLaw(args.low, args.high, args.autocorr)
    return [
        synthlab.GeneratorSpec(
            n_shots=args.shots, n_games=args.games, law=law,
            hot_hand=synthlab.HotHand(delta, args.k_trigger) if delta else None, seed=args.seed,
        )
        for delta in args.delta
    ]


def cmd_simulate(args) -> int:
    config = SimulationConfig(n_sims=args.sims, master_seed=args.seed, k_values=args.k, alpha=args.alpha,
                              t_test=args.t_test)
    rows = synthlab.power_study(_spec_grid(args), args.tests, args.players, config, n_perms=args.perms,
                                prob_shift=args.prob_shift, workers=args.workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "autocorr", "test", "k", "players", "tested", "rejected", "rejection_rate",
                "mean_raw_effect", "mean_adjusted_effect"])
    for r in rows:
        w.writerow([r.cell["delta"], r.cell["law_autocorr"], r.test, r.k, r.n_players, r.n_tested, r.n_rejected,
                    _fmt(r.rejection_rate), _fmt(r.mean_raw_effect), _fmt(r.mean_adjusted_effect)])
    if args.output:
        Path(args.output).write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_generate(args) -> int:
    if len(args.delta) != 1:
        raise CLIError("generate takes a single --delta value")
    spec = _spec_grid(args)[0]
    records, values = [], []
    for player in synthlab.gen_league(spec, args.players):
        records.extend(player.dataset.records())
        values.extend(np.clip(player.probabilities + args.prob_shift, 0.0, 1.0).tolist())
    probmodel.write_probabilities(records, values, args.output)
    print(f"wrote {len(records)} shots for {args.players} players to {args.output}")
    return 0


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if first != RESULTS_MAGIC:
            raise CLIError(f"{path}: not a version-1 results file (first line {first!r})")
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0].keys()) != RESULT_COLUMNS:
        raise CLIError(f"{path}: unexpected columns")
    return rows


def cmd_meta(args) -> int:
    if args.results:
        rows = read_results(args.results)
        ks = sorted({int(r["k"]) for r in rows})
        print("k,tests,positives,meta_p")
        for k in ks:
            tested = [r for r in rows if int(r["k"]) == k and r["p"] != ""]
            pos = sum(float(r["p"]) < args.alpha for r in tested)
            value = league.binomial_meta_test(len(tested), pos, args.alpha) if tested else 1.0
            print(f"{k},{len(tested)},{pos},{value!r}")
        return 0
    if args.tests is None or args.positives is None:
        raise CLIError("give --results, or both --tests and --positives")
    try:
        value = league.binomial_meta_test(args.tests, args.positives, args.alpha)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    print(repr(value))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_model_flags(p):
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--patience", type=_positive_int, default=5)
    p.add_argument("--max-epochs", type=_positive_int, default=500)
    p.add_argument("--l2", type=float, default=1e-4)


def _add_features_flag(p):
    p.add_argument("--required-features", type=lambda s: frozenset(x for x in s.split(",") if x),
                   default=shotlog.DEFAULT_REQUIRED_FEATURES,
                   help="comma-separated features every shot of a kept game must have")


def _add_sim_flags(p, k_default="1,2,3,4"):
    p.add_argument("--k", type=_k_list, default=_k_list(k_default))
    p.add_argument("--sims", type=_positive_int, default=100)
    p.add_argument("--alpha", type=_unit_interval, default=0.05)
    p.add_argument("--t-test", choices=T_TEST_METHODS, default="prediction")
    p.add_argument("--workers", type=_positive_int, default=1)


def _add_synth_flags(p):
    p.add_argument("--players", type=_positive_int, default=200)
    p.add_argument("--shots", type=_positive_int, default=20, help="shots per game")
    p.add_argument("--games", type=_positive_int, default=50, help="games per player")
    p.add_argument("--delta", type=_float_list, default=(0.0,), help="hot-hand boost(s), comma-separated")
    p.add_argument("--k-trigger", type=_positive_int, default=1)
    p.add_argument("--low", type=float, default=0.3)
    p.add_argument("--high", type=float, default=0.7)
    p.add_argument("--autocorr", type=float, default=0.0)
    p.add_argument("--prob-shift", type=float, default=0.0, help="bias added to the probabilities handed to tests")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hothand", description="Hot-hand tests for heterogeneous shot sequences.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-player tests and league report")
    p.add_argument("--input", help="shot-log CSV")
    p.add_argument("--probs-file", help="shot log with a trailing p column; skips model training")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--min-shots", type=_non_negative_int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--length-subset", choices=league.SUBSETS, default="all")
    _add_sim_flags(p)
    _add_model_flags(p)
    _add_features_flag(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train-model", help="fit the logistic shot model and report calibration")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="model JSON path")
    p.add_argument("--calibration-out", help="reliability table CSV path")
    p.add_argument("--bins", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    _add_features_flag(p)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("calibrate", help="reliability curve of supplied or LOSO probabilities")
    p.add_argument("--input")
    p.add_argument("--probs-file")
    p.add_argument("--output", help="CSV path (default stdout)")
    p.add_argument("--bins", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    _add_features_flag(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="rejection rates on synthetic players")
    p.add_argument("--tests", type=lambda s: tuple(x for x in s.split(",") if x), default=("hetero",))
    p.add_argument("--perms", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output")
    _add_sim_flags(p, k_default="1")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="write a synthetic shot log with true probabilities")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", required=True)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("meta", help="binomial meta-test")
    p.add_argument("--results", help="results.csv from analyze")
    p.add_argument("--tests", type=_positive_int, help="number of tests M")
    p.add_argument("--positives", type=_non_negative_int, help="number of positive tests r")
    p.add_argument("--alpha", type=_unit_interval, default=0.05)
    p.set_defaults(func=cmd_meta)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "tests", None) and args.command == "simulate":
        bad = set(args.tests) - set(synthlab.TESTS)
        if bad:
            parser.error(f"unknown tests {sorted(bad)}; choose from {synthlab.TESTS}")
    try:
        return args.func(args)
    except (CLIError, shotlog.ShotLogError, probmodel.TrainingError, FileNotFoundError) as exc:
        print(f"hothand {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
