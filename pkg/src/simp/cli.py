"""Command line entry point: ``simp <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 bad input data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation
from .data import Dataset, ExtractConfig, extract_episodes, ingest_csv, split, write_trajectories
from .errors import InputError, SimpError
from .features import FeatureConfig, LaneGeometry
from .synthetic import SynthConfig, generate_synthetic
from .trainer import Model, TrainConfig, predict, train

log = logging.getLogger("simp")

DEFAULT_CONFIG = {
    "seed": 0,
    "synth": {},
    "extract": {"n_lanes": 5, "lane_width": 12.0, "train_fraction": 0.8},
    "train": {"validation_fraction": 0.1},
    "eval": {"threshold": evaluation.DEFAULT_THRESHOLD},
    "sample": {"count": 50},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _setup_logging():
    level = os.environ.get("SIMP_LOG", "warning").upper()
    logging.basicConfig(
        stream=sys.stderr, force=True,
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s",
    )


def load_config(path):
    """Defaults merged section by section with the JSON file at ``path``."""
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return config
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("config file must hold a JSON object")
    unknown = set(doc) - set(config)
    if unknown:
        raise InputError(f"unknown config section(s): {sorted(unknown)}")
    for key, value in doc.items():
        if isinstance(config[key], dict):
            if not isinstance(value, dict):
                raise InputError(f"config section {key!r} must be an object")
            config[key].update(value)
        else:
            config[key] = value
    return config


def _dataclass_from(cls, values, **extra):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise InputError(f"unknown {cls.__name__} option(s): {sorted(unknown)}")
    doc = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    doc.update(extra)
    try:
        return cls(**doc)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _extract_config(section, seed, n_lanes=None, lane_width=None):
    section = dict(section)
    section.pop("train_fraction", None)
    lanes, width = section.pop("n_lanes", 5), section.pop("lane_width", 12.0)
    geometry = LaneGeometry(int(n_lanes or lanes), float(lane_width or width))
    features = _dataclass_from(FeatureConfig, section.pop("features", {}))
    return _dataclass_from(ExtractConfig, section, geometry=geometry, features=features, seed=seed)


def resolve_dataset(path, default_name):
    """A dataset prefix, or a directory holding ``<default_name>.features.csv``."""
    path = Path(path)
    if path.is_dir():
        path = path / default_name
    return Dataset.load(path)


def _write_manifest(out, args, config, inputs, outputs):
    manifest = {
        "subcommand": args.command,
        "config": str(args.config) if args.config else None,
        "resolved_config": config,
        "seed": config["seed"],
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    (Path(out) / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _save_split(dataset, out, config, seed):
    train_set, test_set = split(dataset, config["extract"].get("train_fraction", 0.8), seed)
    dataset.save(out / "dataset")
    train_set.save(out / "train")
    test_set.save(out / "test")
    log.info("dataset %s; train %d / test %d episodes", dataset.composition(),
             train_set.episode_ids.size, test_set.episode_ids.size)
    return [out / f"{name}.{ext}" for name in ("dataset", "train", "test") for ext in ("features.csv", "meta.json")]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, config, out):
    section = dict(config["synth"])
    if args.episodes is not None:
        section["n_scenes"] = args.episodes
    synth_cfg = _dataclass_from(SynthConfig, section, seed=config["seed"])
    corpus = generate_synthetic(synth_cfg)
    write_trajectories(corpus.records, out / "synthetic.trajectories.csv")
    (out / "synthetic.truth.json").write_text(corpus.truth_json())
    ext = _extract_config(config["extract"], config["seed"], synth_cfg.n_lanes, synth_cfg.lane_width)
    dataset = extract_episodes(corpus.records, ext)
    outputs = [out / "synthetic.trajectories.csv", out / "synthetic.truth.json"]
    outputs += _save_split(dataset, out, config, config["seed"])
    print(f"{len(corpus.records)} records, {len(corpus.truth)} scripted lane changes, {len(dataset)} samples")
    return [], outputs


def cmd_ingest(args, config, out):
    column_map = None
    if args.column_map:
        try:
            column_map = json.loads(Path(args.column_map).read_text())
        except FileNotFoundError:
            raise InputError(f"column map {args.column_map} not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"column map is not valid JSON: {exc}") from None
    records, report = ingest_csv(args.data, column_map)
    write_trajectories(records, out / "trajectories.csv")
    (out / "ingest_report.json").write_text(json.dumps(dataclasses.asdict(report), indent=2) + "\n")
    print(f"{report.rows} rows read, {len(records)} records kept, {report.skipped} skipped, "
          f"{report.duplicates} duplicates")
    return [args.data], [out / "trajectories.csv", out / "ingest_report.json"]


def cmd_extract(args, config, out):
    data = Path(args.data)
    if data.is_dir():
        data = data / "trajectories.csv"
    records, _ = ingest_csv(data)
    dataset = extract_episodes(records, _extract_config(config["extract"], config["seed"]))
    outputs = _save_split(dataset, out, config, config["seed"])
    print(f"{len(dataset)} samples in {dataset.episode_ids.size} episodes")
    return [data], outputs


def cmd_train(args, config, out):
    section = dict(config["train"])
    val_fraction = section.pop("validation_fraction", 0.1)
    for flag in ("w1", "w2"):
        if getattr(args, flag) is not None:
            section[flag] = getattr(args, flag)
    train_cfg = _dataclass_from(TrainConfig, section, seed=config["seed"])
    dataset = resolve_dataset(args.data, "train")
    validation = None
    if val_fraction:
        dataset, validation = split(dataset, 1.0 - val_fraction, config["seed"])
    model, history = train(dataset, validation, train_cfg)
    model.save(out / "model.json")
    (out / "training_log.json").write_text(json.dumps(history.to_dict(), indent=2) + "\n")
    last = history.epochs[history.best_epoch]
    print(f"best epoch {history.best_epoch}: total loss {last.get('val_total', last['train_total']):.4f}")
    return [args.data], [out / "model.json", out / "training_log.json"]


def cmd_eval(args, config, out):
    model = Model.load(args.model)
    dataset = resolve_dataset(args.data, "test")
    threshold = args.threshold if args.threshold is not None else config["eval"]["threshold"]
    if not 0.0 <= threshold <= 1.0:
        raise InputError("threshold must lie in [0, 1]")
    params = predict(model, dataset.features)
    report = evaluation.evaluate(params, dataset.area, dataset.y_s, dataset.y_t, dataset.episode,
                                 threshold, seed=config["seed"])
    report.write(out)
    print(report.summary())
    return [args.model, args.data], [out / "report.json", out / "roc.csv", out / "per_dia_auc.csv"]


def _params_table(dataset, params):
    header = ["episode_id", "vehicle_id", "frame_id"]
    cols = []
    for a in range(params.n_areas):
        header.append(f"w{a + 1}")
        cols.append(params.weights[:, a])
        for m in range(params.n_components):
            for name in ("alpha", "mu_s", "mu_t", "sigma_s", "sigma_t", "rho"):
                header.append(f"{name}{a + 1}_{m + 1}")
                cols.append(getattr(params, name)[:, a, m])
    rows = [[int(dataset.episode[i]), int(dataset.vehicle[i]), int(dataset.frame[i]),
             *(float(c[i]) for c in cols)] for i in range(len(dataset))]
    return header, rows


def cmd_predict(args, config, out):
    model = Model.load(args.model)
    dataset = resolve_dataset(args.data, "test")
    params = predict(model, dataset.features)
    header, rows = _params_table(dataset, params)
    evaluation.write_csv(out / "predictions.csv", rows, header)
    print(f"{len(rows)} frames predicted")
    return [args.model, args.data], [out / "predictions.csv"]


def cmd_sample(args, config, out):
    model = Model.load(args.model)
    dataset = resolve_dataset(args.data, "test")
    if args.episode is not None:
        rows = np.flatnonzero(dataset.episode == args.episode)
        if rows.size == 0:
            raise InputError(f"episode {args.episode} not in dataset")
        dataset = dataset.subset(rows)
    count = args.count if args.count is not None else config["sample"]["count"]
    if count < 1:
        raise InputError("count must be positive")
    params = predict(model, dataset.features)
    points, bands = evaluation.export_samples(params, dataset.frame, count, seed=config["seed"])
    evaluation.write_csv(out / "samples.csv", points, ["frame_id", "area", "y_s", "y_t"])
    evaluation.write_csv(out / "bands.csv", bands)
    flagged = sum(b["flagged"] for b in bands)
    print(f"{len(points)} points over {len(dataset)} frames; {flagged} area-frames without points")
    return [args.model, args.data], [out / "samples.csv", out / "bands.csv"]


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "extract": cmd_extract, "train": cmd_train,
    "eval": cmd_eval, "predict": cmd_predict, "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--config", help="JSON config; missing keys take defaults")
    common.add_argument("-o", "--out", required=True, help="output directory")

    parser = _Parser(prog="simp", description="Lane-change intention and motion prediction with mixture density networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus and its datasets")
    p.add_argument("--episodes", type=int, help="number of scripted scenes")

    p = sub.add_parser("ingest", parents=[common], help="normalize a trajectory CSV")
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--column-map", help="JSON object mapping field names to CSV columns")

    p = sub.add_parser("extract", parents=[common], help="label episodes and split into train/test")
    p.add_argument("--data", required=True, help="trajectory CSV or a directory holding trajectories.csv")

    p = sub.add_parser("train", parents=[common], help="fit a model")
    p.add_argument("--data", required=True, help="dataset prefix or directory holding train.*")
    p.add_argument("--w1", type=float, help="weight of the likelihood term")
    p.add_argument("--w2", type=float, help="weight of the area cross-entropy term")

    for name, helptext in (("eval", "evaluate a model"), ("predict", "write mixture parameters per frame"),
                           ("sample", "export sampled points and TTLC bands")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", required=True, help="model.json or its directory")
        p.add_argument("--data", required=True, help="dataset prefix or directory holding test.*")
        if name == "eval":
            p.add_argument("--threshold", type=float, help="lane-change decision threshold")
        if name == "sample":
            p.add_argument("--count", type=int, help="points per frame")
            p.add_argument("--episode", type=int, help="only frames of this episode")
    return parser


def run(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = COMMANDS[args.command](args, config, out)
        _write_manifest(out, args, config, inputs, outputs)
    except SimpError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
