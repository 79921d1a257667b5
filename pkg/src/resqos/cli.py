"""Command-line entry point: ``resqos prepare | train | experiment | reproduce | synth``.

Every result directory gets a ``run.json`` manifest holding the resolved
configuration; ``resqos reproduce run.json --out DIR`` re-executes it.
Settings resolve as defaults < ``--config`` JSON file < command-line flags.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .dataset import DataError, load_wsdream, MATRIX_FILE
from .features import BinningScheme, compute_distributions, dump_distributions
from .model import ConfigError, PlresConfig, VocabSizes
from .training import (
    BaselineConfig,
    NumericalError,
    SweepData,
    TrainConfig,
    make_split,
    run_cell,
    run_density_sweep,
    write_results_csv,
    write_summary_json,
    write_table_csv,
)

log = logging.getLogger("resqos")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
DATA_ENV = "RESQOS_DATA_DIR"
STANDARD_DENSITIES = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30]
LR_SWEEP = [0.0001, 0.0005, 0.001, 0.005, 0.01]
SUITES = ("rq1", "rq2", "rq3", "rq4", "depth", "loss", "lr")

DEFAULTS = {
    "data_dir": None,
    "matrix_file": MATRIX_FILE,
    "k": 10,
    "qos_max": 20.0,
    "density": 0.05,
    "seed": 0,
    "blocks": 2,
    "id_dim": 16,
    "loc_dim": 16,
    "lr": 0.001,
    "batch_size": 256,
    "epochs": 50,
    "loss": "mae",
    "no_prob": False,
    "no_location": False,
    "no_shortcuts": False,
    "validation_fraction": 0.0,
    "clamp": False,
    "top_k": 10,
    "lam": 0.5,
    "densities": None,
    "seeds": [0],
    "workers": None,
    "variant": "PLRes",
}


class CliConfigError(Exception):
    pass


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _resolve(args, keys) -> dict:
    """Merge defaults, the optional JSON config file, and explicitly given flags."""
    settings = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(keys)
        if unknown:
            raise CliConfigError(f"unknown keys in {args.config}: {sorted(unknown)}")
        settings.update(from_file)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    if "data_dir" in settings and not settings["data_dir"]:
        settings["data_dir"] = os.environ.get(DATA_ENV)
        if not settings["data_dir"]:
            raise CliConfigError(f"no data directory: pass --data-dir or set {DATA_ENV}")
    return settings


def _train_config(s: dict) -> TrainConfig:
    model = PlresConfig(
        n_blocks=s["blocks"],
        id_embed_dim=s["id_dim"],
        loc_embed_dim=s["loc_dim"],
        k_intervals=s["k"],
        use_probability=not s["no_prob"],
        use_location=not s["no_location"],
        use_shortcuts=not s["no_shortcuts"],
        seed=s["seed"],
    )
    return TrainConfig(lr=s["lr"], batch_size=s["batch_size"], max_epochs=s["epochs"], loss_kind=s["loss"],
                       density=s["density"], seed=s["seed"], qos_max=s["qos_max"],
                       validation_fraction=s["validation_fraction"], clamp_predictions=s["clamp"], model=model)


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# -- prepare -----------------------------------------------------------------

PREPARE_KEYS = ["data_dir", "matrix_file", "k", "qos_max", "density", "seed"]


def execute_prepare(s: dict, out_dir: str) -> dict:
    data = load_wsdream(s["data_dir"], s["matrix_file"])
    split = make_split(data.records, s["density"], s["seed"])
    if len(split.test) == 0:
        log.warning("density %g leaves the test set empty", s["density"])
    dists = compute_distributions(split.train, BinningScheme(s["k"], s["qos_max"]), data.n_users, data.n_services)
    os.makedirs(out_dir, exist_ok=True)
    split.save_manifest(os.path.join(out_dir, "split.json"))
    dump_distributions(os.path.join(out_dir, "distributions.csv"), dists)
    content = {
        "settings": {**s, "data_dir": os.path.abspath(s["data_dir"])},
        "n_users": data.n_users,
        "n_services": data.n_services,
        "n_valid": len(data.records),
        "n_train": len(split.train),
        "n_test": len(split.test),
        "vocab_sizes": VocabSizes.from_dataset(data)._asdict(),
        "split_manifest": "split.json",
        "distribution_dump": "distributions.csv",
    }
    manifest = {**content, "manifest_hash": _digest(content), "tool_version": __version__, "created_at": _now()}
    _write_json(os.path.join(out_dir, "prepare.json"), manifest)
    log.info("prepared %d users x %d services, %d valid entries (%d train / %d test)", data.n_users,
             data.n_services, len(data.records), len(split.train), len(split.test))
    return manifest


# -- train ---------------------------------------------------------------------

TRAIN_KEYS = ["data_dir", "matrix_file", "k", "qos_max", "density", "seed", "blocks", "id_dim", "loc_dim", "lr",
              "batch_size", "epochs", "loss", "no_prob", "no_location", "no_shortcuts", "validation_fraction",
              "clamp", "variant"]


def execute_train(s: dict, out_dir: str) -> dict:
    config = _train_config(s)
    data = load_wsdream(s["data_dir"], s["matrix_file"])
    sweep_data = SweepData(data.records, VocabSizes.from_dataset(data))
    os.makedirs(out_dir, exist_ok=True)
    started = _now()
    splits_dir = os.path.join(out_dir, "splits")
    os.makedirs(splits_dir, exist_ok=True)
    cell = run_cell(sweep_data, s["variant"], config, config.density, config.seed, splits_dir, keep_model=True)
    write_results_csv(os.path.join(out_dir, "results.csv"), [cell])
    write_summary_json(os.path.join(out_dir, "summary.json"), [cell])
    cell.model.save(os.path.join(out_dir, "best.ckpt.json"), {"training": config.to_dict()})
    manifest = _run_manifest("train", s, started, ["results.csv", "summary.json", "best.ckpt.json"])
    _write_json(os.path.join(out_dir, "run.json"), manifest)
    log.info("best epoch %d: test MAE %.4f RMSE %.4f", cell.best.epoch, cell.best.test_mae, cell.best.test_rmse)
    return manifest


# -- experiment ----------------------------------------------------------------

EXPERIMENT_KEYS = TRAIN_KEYS + ["top_k", "lam", "densities", "seeds", "workers"]


def suite_arms(suite: str, base: TrainConfig, baseline: BaselineConfig) -> tuple[dict, list]:
    """Arms (variant name -> config) and default densities for one experiment suite."""
    m = base.model
    if suite == "rq1":
        return {"PLRes": base, "UIPCC": baseline}, STANDARD_DENSITIES
    if suite == "rq2":
        return {"PLRes": base, "PLRes-noprob": replace(base, model=replace(m, use_probability=False))}, STANDARD_DENSITIES
    if suite == "rq3":
        return {"PLRes": base, "PLRes-noloc": replace(base, model=replace(m, use_location=False))}, STANDARD_DENSITIES
    if suite == "rq4":
        return {"PLRes": base, "DNN": replace(base, model=replace(m, use_shortcuts=False))}, STANDARD_DENSITIES
    if suite == "depth":
        return {f"{n} Block": replace(base, model=replace(m, n_blocks=n)) for n in (1, 2, 3, 4)}, STANDARD_DENSITIES
    if suite == "loss":
        return {"Loss-Mae": replace(base, loss_kind="mae"), "Loss-Mse": replace(base, loss_kind="mse")}, STANDARD_DENSITIES
    if suite == "lr":
        return {f"lr={lr:g}": replace(base, lr=lr) for lr in LR_SWEEP}, [0.05]
    raise CliConfigError(f"unknown suite {suite!r}; choose from {SUITES}")


def execute_experiment(s: dict, out_dir: str) -> dict:
    base = _train_config(s)
    arms, densities = suite_arms(s["suite"], base, BaselineConfig(s["top_k"], s["lam"]))
    densities = s["densities"] or densities
    data = load_wsdream(s["data_dir"], s["matrix_file"])
    sweep_data = SweepData(data.records, VocabSizes.from_dataset(data))
    os.makedirs(out_dir, exist_ok=True)
    started = _now()
    workers = s["workers"] or os.cpu_count() or 1
    significance = ("PLRes", "UIPCC") if s["suite"] == "rq1" else None
    cells = run_density_sweep(sweep_data, arms, densities, s["seeds"], workers=workers,
                              splits_dir=os.path.join(out_dir, "splits"), keep_predictions=significance is not None)
    write_results_csv(os.path.join(out_dir, "results.csv"), cells)
    write_table_csv(os.path.join(out_dir, "table_mae.csv"), cells, "test_mae")
    write_table_csv(os.path.join(out_dir, "table_rmse.csv"), cells, "test_rmse")
    arms_doc = {name: cfg.to_dict() for name, cfg in arms.items()}
    write_summary_json(os.path.join(out_dir, "summary.json"), cells, significance, {"suite": s["suite"], "arms": arms_doc})
    manifest = _run_manifest("experiment", s, started, ["results.csv", "table_mae.csv", "table_rmse.csv", "summary.json"])
    _write_json(os.path.join(out_dir, "run.json"), manifest)
    return manifest


def _run_manifest(command: str, s: dict, started: str, outputs: list) -> dict:
    settings = dict(s)
    settings["data_dir"] = os.path.abspath(settings["data_dir"])
    # worker count never changes results, keep it out of the reproducible settings
    settings.pop("workers", None)
    return {
        "command": command,
        "settings": settings,
        "settings_hash": _digest(settings),
        "tool_version": __version__,
        "seed": s["seed"],
        "started_at": started,
        "finished_at": _now(),
        "outputs": outputs,
    }


def execute_reproduce(manifest_path: str, out_dir: str, workers: int | None = None) -> dict:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    settings = dict(manifest["settings"])
    command = manifest["command"]
    if command == "train":
        return execute_train(settings, out_dir)
    if command == "experiment":
        settings["workers"] = workers
        return execute_experiment(settings, out_dir)
    raise CliConfigError(f"{manifest_path}: cannot reproduce command {command!r}")


# -- argument parsing ------------------------------------------------------------

def _add_data_flags(p):
    p.add_argument("--data-dir", dest="data_dir", help=f"WS-DREAM directory (default: ${DATA_ENV})")
    p.add_argument("--matrix-file", dest="matrix_file", help="QoS matrix file name inside the data dir")
    p.add_argument("--k", type=int, help="number of QoS intervals (default 10)")
    p.add_argument("--qos-max", dest="qos_max", type=float, help="upper end of the binned range in seconds (default 20)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file of settings (overridden by flags)")


def _add_model_flags(p):
    p.add_argument("--density", type=float, help="training density in (0, 1]")
    p.add_argument("--blocks", type=int, help="number of residual blocks (default 2)")
    p.add_argument("--id-dim", dest="id_dim", type=int)
    p.add_argument("--loc-dim", dest="loc_dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int, help="maximum epochs (default 50)")
    p.add_argument("--loss", choices=["mae", "mse"])
    p.add_argument("--no-prob", dest="no_prob", action="store_const", const=True)
    p.add_argument("--no-location", dest="no_location", action="store_const", const=True)
    p.add_argument("--no-shortcuts", dest="no_shortcuts", action="store_const", const=True)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float,
                   help="hold out this share of training data for epoch selection instead of the test set")
    p.add_argument("--clamp", action="store_const", const=True, help="clamp negative predictions to 0")
    p.add_argument("--variant", help="arm name written to the results CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resqos", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build records, split and distributions")
    _add_data_flags(p)
    p.add_argument("--density", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model and write per-epoch results")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--prepared", help="directory written by 'prepare'; its data/split settings are reused")
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="run an experiment suite over densities and seeds")
    p.add_argument("suite", choices=SUITES)
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--densities", type=float, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--top-k", dest="top_k", type=int, help="UIPCC neighbours (default 10)")
    p.add_argument("--lam", type=float, help="UIPCC blend weight of the user-based part (default 0.5)")
    p.add_argument("--workers", type=int, help="parallel sweep cells (default: all cores)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reproduce", help="re-run a run.json manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("synth", help="write a synthetic WS-DREAM-format dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--services", type=int, default=200)
    p.add_argument("--countries", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "prepare":
            execute_prepare(_resolve(args, PREPARE_KEYS), args.out)
        elif args.command == "train":
            if args.prepared:
                with open(os.path.join(args.prepared, "prepare.json")) as fh:
                    prepared = json.load(fh)["settings"]
                for key, value in prepared.items():
                    if getattr(args, key, None) is None:
                        setattr(args, key, value)
            execute_train(_resolve(args, TRAIN_KEYS), args.out)
        elif args.command == "experiment":
            s = _resolve(args, EXPERIMENT_KEYS)
            s["suite"] = args.suite
            execute_experiment(s, args.out)
        elif args.command == "reproduce":
            execute_reproduce(args.manifest, args.out, args.workers)
        elif args.command == "synth":
            from .synthetic import synthesize, write_wsdream_dir

            write_wsdream_dir(args.out, *synthesize(args.users, args.services, args.countries, seed=args.seed))
    except (CliConfigError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def main() -> None:
    sys.exit(run())
