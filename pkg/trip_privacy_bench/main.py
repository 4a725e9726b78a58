"""
Main entry point for Trip Privacy Bench (command line version).

Every stage reads and writes files so stages compose in shell pipelines:
synth/ingest -> perturb -> attack -> detect, or one `experiment` for the full grid
followed by `report` to re-render plots and summaries from its CSVs.
"""

import argparse
import json
import logging
import os
import sys

from .attack import MaliciousIntent, ODMode, inject_attacks
from .config import (APP_NAME, DEFAULT_ATTACK_FRACTION, DEFAULT_CELL_SIDE_M, DEFAULT_MIN_POINTS,
                     DEFAULT_PAIR_BUDGET, DEFAULT_TEST_FRACTION, DEFAULT_TEST_PER_GROUP, ENV_PREFIX,
                     VERSION, RunConfig)
from .database import (MatrixCache, ResultsDatabase, load_corpus, load_model, save_model,
                       write_corpus, write_manifest, write_perturbation_report, write_scores)
from .detectors import dbscan as dbscan_detector
from .detectors import seq_model
from .errors import BenchError, ConfigError, StorageError
from .evaluation import ExperimentGrid, PrivacySetting, roc, run_grid
from .privacy import PrivacyConfig, PrivacyMode, perturb_corpus
from .report import RUN_INFO_FILE, render_report
from .synth import SynthParams, synth_corpus
from .trajectory import Label, group_by_od, read_porto, split_test
from .utils import setup_logging

logger = logging.getLogger(__name__)


def env_default(name, default=None, cast=str):
    """Flag default taken from TPB_<NAME> when set."""
    value = os.environ.get(ENV_PREFIX + name)
    if value is None or value == "":
        return default
    try:
        return cast(value)
    except ValueError:
        raise ConfigError(f"Invalid value {value!r} for {ENV_PREFIX}{name}")


def od_value(value):
    return ODMode(value).value


def stem_path(path, suffix):
    return os.path.splitext(path)[0] + suffix


def corpus_summary(corpus, cell_side=DEFAULT_CELL_SIDE_M):
    b = corpus.bbox
    return (f"{len(corpus)} trips, bbox [{b.min_lon:.5f}, {b.min_lat:.5f}, {b.max_lon:.5f}, "
            f"{b.max_lat:.5f}], {len(group_by_od(corpus, cell_side))} O-D groups")


def split_from_file(corpus, splits, per_group, cell_side, seed):
    """(train ids, test ids) from a SPLIT column, or a fresh grouped split."""
    if splits:
        train = sorted(i for i, s in splits.items() if s == "train")
        test = sorted(i for i, s in splits.items() if s == "test")
        return train, test
    return split_test(group_by_od(corpus, cell_side), per_group, seed)


def privacy_from_args(args):
    return PrivacyConfig(args.privacy, args.epsilon or 0.0, args.threshold, args.test_fraction,
                         args.seed).validate()


def cmd_synth(args):
    overrides = {}
    if args.config:
        overrides.update(RunConfig.load(args.config)["corpus"]["synth"])
    for name in ("n_trips", "n_od_pairs", "routes_per_pair", "jitter_m"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if args.seed is not None:
        overrides["seed"] = args.seed
    params = SynthParams(**overrides).validate()
    corpus = synth_corpus(params)
    write_corpus(corpus, args.out, extra_meta={"synth": params.to_dict()})
    print(f"Synthesized {corpus_summary(corpus)} -> {args.out}")
    return 0


def cmd_ingest(args):
    corpus, stats = read_porto(args.input, args.min_points)
    write_corpus(corpus, args.out, extra_meta={"source": os.path.basename(args.input)})
    print(f"Ingested {stats.kept} of {stats.rows} rows ({stats.dropped} dropped: "
          f"{stats.missing_data} missing data, {stats.too_short} too short, "
          f"{stats.malformed} malformed); {corpus_summary(corpus)} -> {args.out}")
    return 0


def cmd_perturb(args):
    corpus, splits = load_corpus(args.input)
    cfg = privacy_from_args(args)
    perturbed, reports = perturb_corpus(corpus, cfg, jobs=args.jobs)
    write_corpus(perturbed, args.out, splits, extra_meta={"privacy": cfg.label})
    write_perturbation_report(reports, stem_path(args.out, ".report.csv"))
    n_predicted = sum(r.n_predicted for r in reports)
    print(f"Perturbed {len(perturbed)} trips with {cfg.label} ({n_predicted} predicted points) "
          f"-> {args.out}")
    return 0


def cmd_attack(args):
    if args.c is None or args.q is None:
        raise ConfigError(f"attack needs --c and --q (or {ENV_PREFIX}C and {ENV_PREFIX}Q)")
    corpus, splits = load_corpus(args.input)
    intent = MaliciousIntent(args.c, args.q, args.od).validate()
    train, test = split_from_file(corpus, splits, args.test_per_group, args.cell_side, args.seed)
    injection = inject_attacks(corpus, test, intent, args.fraction, args.seed)
    split_column = {i: "train" for i in train}
    split_column.update({i: "test" for i in injection.test_ids})
    write_corpus(injection.corpus, args.out, split_column, extra_meta={"attack": intent.label})
    write_manifest(injection.manifest, stem_path(args.out, ".manifest.csv"))
    print(f"Injected {len(injection.manifest)} malicious trips ({intent.label}), "
          f"{len(injection.rejected)} rejected -> {args.out}")
    return 0


def cmd_detect(args):
    corpus, splits = load_corpus(args.input)
    cfg = privacy_from_args(args)
    test = sorted(i for i, s in splits.items() if s == "test") or corpus.ids
    if args.detector == "dbscan":
        if cfg.mode is PrivacyMode.TRAJECTORY:
            raise ConfigError("dbscan only supports offline detection; use location or none")
        params = dbscan_detector.DbscanParams(args.eps, args.min_pts, args.score_k).validate()
        cache = MatrixCache(args.cache_dir) if args.cache_dir else None
        result = dbscan_detector.detect(corpus, test, cfg, params, args.cell_side, args.max_pairs,
                                        jobs=args.jobs, cache=cache)
        scored = result.scored
    else:
        if args.model and os.path.exists(args.model):
            model = load_model(args.model)
        else:
            train = sorted(i for i, s in splits.items() if s == "train")
            train = train or [t.id for t in corpus if t.label is Label.NORMAL]
            model, report = seq_model.fit_seq_detector(corpus, train, cfg, seq_model.SeqModelConfig(),
                                                       jobs=args.jobs)
            if args.model:
                save_model(model, args.model)
        scored = seq_model.detect(corpus, test, cfg, model, jobs=args.jobs)
    write_scores(scored, args.out)
    truths = {s.truth for s in scored}
    line = f"Scored {len(scored)} trips with {args.detector} under {cfg.label} -> {args.out}"
    if Label.NORMAL in truths and Label.MALICIOUS in truths:
        line += f" (auc={roc(scored).auc:.4f})"
    print(line)
    return 0


def build_grid(run_cfg, cache=None):
    """ExperimentGrid from a validated RunConfig."""
    g = run_cfg["grid"]
    settings = []
    for mode in g["privacy_modes"]:
        if mode == "none":
            settings.append(PrivacySetting())
        else:
            settings += [PrivacySetting(mode, float(e)) for e in g["epsilons"]]
    try:
        dbscan_params = dbscan_detector.DbscanParams(**run_cfg["dbscan"]).validate()
        seq_cfg = seq_model.SeqModelConfig(**run_cfg["seq"]).validate()
    except TypeError as e:
        raise ConfigError(str(e))
    return ExperimentGrid(
        privacy=tuple(settings),
        intents=tuple((float(c), float(q)) for c, q in g["intents"]),
        od_modes=tuple(ODMode(m) for m in g["od_modes"]),
        detectors=tuple(d for d in ("dbscan", "seq") if d in g["detectors"]),
        seed=run_cfg["seed"],
        attack_fraction=g["attack_fraction"],
        test_per_group=g["test_per_group"],
        cell_side=g["cell_side_m"],
        max_pairs_budget=g["max_pairs"],
        test_fraction=g["test_fraction"],
        dbscan=dbscan_params,
        calibrate_min_pts=g["calibrate_min_pts"],
        calibration_intent=tuple(g["calibration_intent"]),
        seq=seq_cfg,
        jobs=run_cfg["jobs"],
        cache=cache,
    )


def load_experiment_corpus(run_cfg):
    c = run_cfg["corpus"]
    if c["source"] == "synth":
        try:
            params = SynthParams(**c["synth"])
        except TypeError as e:
            raise ConfigError(str(e))
        return synth_corpus(params)
    if c["source"] == "porto":
        return read_porto(c["path"], c["min_points"])[0]
    return load_corpus(c["path"])[0]


def cmd_experiment(args):
    run_cfg = RunConfig.load(args.config) if args.config else RunConfig()
    run_cfg.override(None, "seed", args.seed).override(None, "jobs", args.jobs)
    run_cfg.override("output", "dir", args.out)
    grid_cfg = run_cfg["grid"]
    if args.detector:
        run_cfg.override("grid", "detectors", [args.detector])
    if args.privacy:
        run_cfg.override("grid", "privacy_modes", [args.privacy])
    if args.epsilon is not None:
        run_cfg.override("grid", "epsilons", [args.epsilon])
    if args.c is not None or args.q is not None:
        intents = [i for i in grid_cfg["intents"]
                   if (args.c is None or i[0] == args.c) and (args.q is None or i[1] == args.q)]
        if not intents:
            intents = [[args.c if args.c is not None else 500.0, args.q if args.q is not None else 0.7]]
        run_cfg.override("grid", "intents", intents)
    if args.od:
        run_cfg.override("grid", "od_modes", [args.od])
    if args.max_pairs is not None:
        run_cfg.override("grid", "max_pairs", args.max_pairs)

    out_dir = run_cfg["output"]["dir"]
    cache_dir = run_cfg["output"]["cache_dir"]
    grid = build_grid(run_cfg, MatrixCache(cache_dir) if cache_dir else None)
    corpus = load_experiment_corpus(run_cfg)
    results = run_grid(grid, corpus)

    db = ResultsDatabase(out_dir)
    success, message = db.save_results(results)
    if not success:
        raise StorageError(message)
    try:
        with open(os.path.join(out_dir, RUN_INFO_FILE), "w") as f:
            json.dump(run_cfg.to_dict(), f, indent=2, sort_keys=True)
    except OSError as e:
        raise StorageError(f"Cannot write run config: {e}")
    render_report(out_dir)
    n_failed = sum(1 for r in results if r.status == "failed")
    print(f"{message}; {n_failed} failed cells -> {out_dir}")
    return 0


def cmd_report(args):
    written = render_report(args.results_dir)
    print(f"Rendered {len(written)} files in {args.results_dir}")
    return 0


def _privacy_flags(parser):
    parser.add_argument("--privacy", choices=[m.value for m in PrivacyMode],
                        default=env_default("PRIVACY", "none"))
    parser.add_argument("--epsilon", type=float, default=env_default("EPSILON", None, float),
                        help="per-point budget in 1/meter (mean noise 2/epsilon)")
    parser.add_argument("--threshold", type=float, default=None,
                        help="prediction threshold in meters (default 2/epsilon)")
    parser.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION)


def _common_flags(parser, seed=0, jobs=1):
    parser.add_argument("--seed", type=int, default=env_default("SEED", seed, int))
    parser.add_argument("--jobs", type=int, default=env_default("JOBS", jobs, int))
    parser.add_argument("--verbose", action="store_true")


def build_parser():

    parser = argparse.ArgumentParser(prog="trip-privacy-bench", description=APP_NAME)
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _common_flags(p, seed=None)
    p.add_argument("--out", default=env_default("OUT", "corpus.csv"))
    p.add_argument("--config", default=env_default("CONFIG"))
    p.add_argument("--n-trips", type=int)
    p.add_argument("--n-od-pairs", type=int)
    p.add_argument("--routes-per-pair", type=int)
    p.add_argument("--jitter-m", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="ingest a Porto-schema CSV")
    _common_flags(p)
    p.add_argument("input")
    p.add_argument("--out", default=env_default("OUT", "corpus.csv"))
    p.add_argument("--min-points", type=int, default=DEFAULT_MIN_POINTS)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("perturb", help="apply a privacy mechanism")
    _common_flags(p)
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _privacy_flags(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("attack", help="inject malicious trips into the test split")
    _common_flags(p)
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float, default=env_default("C", None, float),
                   help="displacement in meters")
    p.add_argument("--q", type=float, default=env_default("Q", None, float),
                   help="fraction of tampered points")
    p.add_argument("--od", choices=[m.value for m in ODMode],
                   default=env_default("OD", "same", od_value))
    p.add_argument("--fraction", type=float, default=DEFAULT_ATTACK_FRACTION)
    p.add_argument("--test-per-group", type=int, default=DEFAULT_TEST_PER_GROUP)
    p.add_argument("--cell-side", type=float, default=DEFAULT_CELL_SIDE_M)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("detect", help="score test trips")
    _common_flags(p)
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--detector", choices=["dbscan", "seq"], default=env_default("DETECTOR", "dbscan"))
    _privacy_flags(p)
    p.add_argument("--max-pairs", type=int, default=env_default("MAX_PAIRS", DEFAULT_PAIR_BUDGET, int))
    p.add_argument("--eps", type=float, default=dbscan_detector.DbscanParams.eps)
    p.add_argument("--min-pts", type=int, default=dbscan_detector.DbscanParams.min_pts)
    p.add_argument("--score-k", type=int, default=None)
    p.add_argument("--cell-side", type=float, default=DEFAULT_CELL_SIDE_M)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--model", default=None, help="sequence model checkpoint to load or save")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("experiment", help="run the full experiment grid")
    _common_flags(p, seed=None, jobs=None)
    p.add_argument("--config", default=env_default("CONFIG"))
    p.add_argument("--out", default=env_default("OUT"))
    p.add_argument("--detector", choices=["dbscan", "seq"], default=env_default("DETECTOR"))
    p.add_argument("--privacy", choices=[m.value for m in PrivacyMode], default=env_default("PRIVACY"))
    p.add_argument("--epsilon", type=float, default=env_default("EPSILON", None, float))
    p.add_argument("--c", type=float, default=env_default("C", None, float))
    p.add_argument("--q", type=float, default=env_default("Q", None, float))
    p.add_argument("--od", choices=[m.value for m in ODMode],
                   default=env_default("OD", None, od_value))
    p.add_argument("--max-pairs", type=int, default=env_default("MAX_PAIRS", None, int))
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="re-render plots and summaries")
    _common_flags(p)
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    """Main entry point for the application."""
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.verbose, env_default("LOG_LEVEL"))
        return args.func(args)
    except BenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
