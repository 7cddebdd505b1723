"""``metaboost`` command line: train, predict, experiment, fetch-data.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 any other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .data import DataError, fetch_dataset, load_manifest
from .ensemble import ALL_METHODS, BASELINE, evaluation, load_model, train_method
from .experiments import config_hash, experiment1, experiment2, experiment3, write_rows
from .leaf_model import NormalGammaParams
from .metatree import FeatureSchema

log = logging.getLogger("metaboost")

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 2, 3, 4
MODEL_FORMAT = "metaboost.model"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    method: str = "mt_pos_pos"
    n_trees: int = 100
    d_max: int = 5
    g: float = 0.6
    leaf_prior: tuple = (0.0, 2.0, 2.0, 2.0)
    learning_rate: float | None = None
    min_samples_leaf: int | None = None
    seed: int = 0
    data: str | None = None
    target: str | None = None
    binary: list = field(default_factory=list)
    model: str | None = None
    report: str | None = None
    input: str | None = None
    output: str | None = None
    data_dir: str | None = None
    which: int = 1
    scale: str = "desk"
    plot_data: str | None = None
    datasets: list = field(default_factory=list)
    cv_k: int = 5
    cv_repeats: int = 3
    jobs: int = 1

    def validate(self) -> None:
        if self.command in ("train",) and self.method not in ALL_METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(ALL_METHODS)}")
        if self.n_trees < 0 or self.d_max < 0:
            raise ConfigError("n_trees and d_max must be nonnegative")
        if not 0.0 <= self.g <= 1.0:
            raise ConfigError("g must lie in [0, 1]")
        if self.learning_rate is not None and not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning rate must lie in (0, 1]")
        try:
            NormalGammaParams(*self.leaf_prior)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad leaf prior {self.leaf_prior}: {exc}") from None
        if self.which not in (1, 2, 3):
            raise ConfigError("experiment must be 1, 2 or 3")
        if self.scale not in ("desk", "paper"):
            raise ConfigError("scale must be desk or paper")

    @property
    def prior(self) -> NormalGammaParams:
        return NormalGammaParams(*self.leaf_prior)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaboost", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option values; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_opts(p):
        p.add_argument("--method", help=f"one of {', '.join(ALL_METHODS)}")
        p.add_argument("--n-trees", "-B", dest="n_trees", type=int)
        p.add_argument("--d-max", dest="d_max", type=int)
        p.add_argument("--g", type=float, help="prior split probability of internal nodes")
        p.add_argument("--leaf-prior", dest="leaf_prior", type=float, nargs=4,
                       metavar=("M", "KAPPA", "ALPHA", "BETA"))
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model on a numeric CSV")
    model_opts(p)
    p.add_argument("--data", help="training CSV with a header row")
    p.add_argument("--target", help="name of the target column (default: last column)")
    p.add_argument("--binary", help="comma-separated 0/1 feature columns "
                                    "(default: every column holding only 0 and 1)")
    p.add_argument("--model", help="output model path")
    p.add_argument("--report", help="output report path (default: <model>.report.json)")

    p = sub.add_parser("predict", help="predict rows of a CSV with a trained model")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--output", help="predictions CSV (default: stdout)")

    p = sub.add_parser("experiment", help="run one of the experiment protocols")
    model_opts(p)
    p.add_argument("--which", type=int, choices=(1, 2, 3))
    p.add_argument("--scale", choices=("desk", "paper"))
    p.add_argument("--output", help="results CSV")
    p.add_argument("--plot-data", dest="plot_data", help="long-format per-replicate CSV")
    p.add_argument("--datasets", help="comma-separated dataset names (experiment 3)")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--cv-k", dest="cv_k", type=int)
    p.add_argument("--cv-repeats", dest="cv_repeats", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for replicates")

    p = sub.add_parser("fetch-data", help="download benchmark datasets into the data directory")
    p.add_argument("--datasets", help="comma-separated names (default: all in the manifest)")
    p.add_argument("--data-dir", dest="data_dir")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "verbose"):
            values[key] = value
    for key in ("binary", "datasets"):
        if isinstance(values.get(key), str):
            values[key] = [v.strip() for v in values[key].split(",") if v.strip()]
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "leaf_prior" in values:
        values["leaf_prior"] = tuple(values["leaf_prior"])
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise ConfigError(f"{cfg.command}: missing required option(s) "
                          + ", ".join("--" + n.replace("_", "-") for n in missing))


def _read_table(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path} is empty (a header row is required)") from exc


def _feature_matrix(table: pd.DataFrame, continuous: list, binary: list) -> np.ndarray:
    missing = [c for c in continuous + binary if c not in table.columns]
    if missing:
        raise DataError(f"input lacks feature columns {missing}")
    cols = table[continuous + binary]
    try:
        X = cols.to_numpy(dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric feature values: {exc}") from exc
    if X.size and not np.all(np.isfinite(X)):
        raise DataError("feature values must be finite (missing cells are not allowed)")
    return X.reshape(len(table), len(continuous) + len(binary))


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "data", "model")
    table = _read_table(cfg.data)
    target = cfg.target or table.columns[-1]
    if target not in table.columns:
        raise DataError(f"target column {target!r} not in {cfg.data}")
    features = [c for c in table.columns if c != target]
    if cfg.binary:
        binary = list(cfg.binary)
        unknown = [c for c in binary if c not in features]
        if unknown:
            raise DataError(f"binary columns {unknown} not in {cfg.data}")
    else:
        binary = [c for c in features if table[c].isin([0, 1]).all()]
    continuous = [c for c in features if c not in binary]
    X = _feature_matrix(table, continuous, binary)
    y = pd.to_numeric(table[target], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError(f"target column {target!r} has missing or non-numeric values")
    schema = FeatureSchema(len(continuous), len(binary))
    try:
        schema.check_matrix(X)
    except ValueError as exc:
        raise DataError(str(exc)) from exc

    settings = {"method": cfg.method, "n_trees": cfg.n_trees, "d_max": cfg.d_max, "g": cfg.g,
                "leaf_prior": list(cfg.leaf_prior), "learning_rate": cfg.learning_rate,
                "min_samples_leaf": cfg.min_samples_leaf, "seed": cfg.seed}
    start = time.perf_counter()
    model = train_method(cfg.method, X, y, schema, n_trees=cfg.n_trees, d_max=cfg.d_max,
                         g=cfg.g, leaf_prior=cfg.prior, learning_rate=cfg.learning_rate,
                         min_samples_leaf=cfg.min_samples_leaf)
    wall = time.perf_counter() - start
    pred = model.predict(X)

    payload = {"format": MODEL_FORMAT, "version": 1, "method": cfg.method, "target": target,
               "features": {"continuous": continuous, "binary": binary},
               "config": settings, "model": model.to_dict()}
    Path(cfg.model).write_text(json.dumps(payload, indent=1))
    sse = evaluation(y, pred)
    report = {"method": cfg.method, "n_rows": len(y), "train_sse": sse,
              "train_mse": sse / len(y), "wall_time_s": wall, "seed": cfg.seed,
              "config_hash": config_hash(settings), "model": str(cfg.model)}
    report_path = cfg.report or f"{cfg.model}.report.json"
    Path(report_path).write_text(json.dumps(report, indent=1))
    print(json.dumps(report))
    return 0


def read_model(path):
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    if payload.get("format") != MODEL_FORMAT:
        raise DataError(f"{path} is not a metaboost model file")
    return payload, load_model(json.dumps(payload["model"]))


def cmd_predict(cfg: RunConfig) -> int:
    _require(cfg, "model", "input")
    payload, model = read_model(cfg.model)
    table = _read_table(cfg.input)
    feats = payload["features"]
    X = _feature_matrix(table, feats["continuous"], feats["binary"])
    try:
        pred = model.predict(X)
    except ValueError as exc:
        raise DataError(f"input does not match the model schema: {exc}") from exc
    out = open(cfg.output, "w", newline="") if cfg.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["prediction"])
        writer.writerows([repr(float(v))] for v in pred)
    finally:
        if cfg.output:
            out.close()
    return 0


def cmd_experiment(cfg: RunConfig) -> int:
    common = {"seed": cfg.seed}
    if cfg.which in (1, 2):
        kwargs = dict(scale=cfg.scale, g=cfg.g, leaf_prior=cfg.prior, n_jobs=cfg.jobs, **common)
        if cfg.which == 1:
            summary, detail = experiment1(d_max=cfg.d_max, **kwargs)
        else:
            summary, detail = experiment2(**kwargs)
    else:
        datasets = cfg.datasets or ["diabetes", "liver"]
        summary, detail = experiment3(datasets=datasets, n_trees=cfg.n_trees, g=cfg.g,
                                      leaf_prior=cfg.prior, k=cfg.cv_k, repeats=cfg.cv_repeats,
                                      directory=cfg.data_dir, **common)
    out = cfg.output or f"experiment{cfg.which}_{cfg.scale}.csv"
    write_rows(summary, out)
    plot = cfg.plot_data or f"experiment{cfg.which}_{cfg.scale}_plot.csv"
    write_rows(detail, plot)
    print(f"wrote {out} and {plot}")
    return 0


def cmd_fetch_data(cfg: RunConfig) -> int:
    manifest = load_manifest()
    names = cfg.datasets or sorted(manifest)
    unknown = [n for n in names if n not in manifest]
    if unknown:
        raise ConfigError(f"unknown datasets {unknown}; known: {sorted(manifest)}")
    failed = []
    for name in names:
        try:
            path = fetch_dataset(manifest[name], cfg.data_dir)
            print(f"{name}: {path}")
        except DataError as exc:
            failed.append(name)
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
    if failed:
        print(f"could not fetch: {', '.join(failed)}; place <name>.csv files with the manifest "
              "column names in the data directory manually", file=sys.stderr)
        return EXIT_DATA
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "experiment": cmd_experiment,
            "fetch-data": cmd_fetch_data}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.method == BASELINE and cfg.learning_rate is None:
            cfg.learning_rate = 0.1
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"metaboost: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"metaboost: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to an exit code
        log.debug("runtime failure", exc_info=True)
        print(f"metaboost: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
