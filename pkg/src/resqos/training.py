"""Training loop, evaluation, and density-sweep experiment harness."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .baselines import UIPCC, training_matrix
from .dataset import DatasetSplit, RecordSet, split_by_density
from .features import BinningScheme, Distributions, assemble_batch, compute_distributions
from .model import PlresConfig, PlresModel, VocabSizes
from .nncore import LOSSES, Adam
from .seeding import derive_seed, sub_rng
from .stats import wilcoxon_signed_rank

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 256
    max_epochs: int = 50
    loss_kind: str = "mae"
    density: float = 0.05
    seed: int = 0
    qos_max: float = 20.0
    # > 0 carves a validation set out of the training split and selects the epoch on it
    validation_fraction: float = 0.0
    clamp_predictions: bool = False
    model: PlresConfig = field(default_factory=PlresConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.loss_kind not in LOSSES:
            raise ValueError(f"loss_kind must be one of {sorted(LOSSES)}, got {self.loss_kind!r}")
        if not 0 < self.density <= 1:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = PlresConfig(**d["model"])
        return cls(**d)

    def config_hash(self) -> str:
        """Hash of everything except density and seed, so sweep cells of one arm share it."""
        d = self.to_dict()
        d.pop("density")
        d.pop("seed")
        d["model"].pop("seed")
        return _hash(d)


@dataclass(frozen=True)
class BaselineConfig:
    top_k: int = 10
    lam: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return _hash({"baseline": "uipcc", **self.to_dict()})


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EvalReport:
    epoch: int
    train_loss: float
    test_mae: float
    test_rmse: float
    wall_time: float
    val_mae: float | None = None


@dataclass(eq=False)
class ExperimentResult:
    config: TrainConfig
    reports: list
    best: EvalReport
    best_state: dict
    split_manifest: str | None = None


def mae_rmse(pred, target) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("cannot evaluate on an empty record set")
    err = pred - target
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def _predict(model: PlresModel, batch, clamp: bool) -> np.ndarray:
    pred = model.predict(batch)
    return np.maximum(pred, 0.0) if clamp else pred


def predict_records(model: PlresModel, records: RecordSet, distributions: Distributions, clamp: bool = False):
    return _predict(model, assemble_batch(records, distributions), clamp)


def evaluate(model: PlresModel, records: RecordSet, distributions: Distributions, clamp: bool = False):
    """(MAE, RMSE) of the model over ``records``."""
    if len(records) == 0:
        raise ValueError("cannot evaluate on an empty record set")
    return mae_rmse(predict_records(model, records, distributions, clamp), records.qos)


def train(
    model: PlresModel,
    split: DatasetSplit,
    distributions: Distributions,
    config: TrainConfig,
    validation: RecordSet | None = None,
) -> ExperimentResult:
    """Mini-batch Adam training, evaluating after every epoch.

    The returned ``best`` report is the epoch with the lowest test MAE (or
    validation MAE when ``validation`` is given); the model is left holding
    that epoch's parameters.
    """
    if len(split.train) == 0:
        raise ValueError("empty training set")
    if len(split.test) == 0:
        raise ValueError("empty test set; use a density below 1.0")
    loss_fn = LOSSES[config.loss_kind]
    batch = assemble_batch(split.train, distributions)
    targets = split.train.qos
    optimizer = Adam(model.parameters(), lr=config.lr)
    rng = sub_rng(config.seed, "shuffle")
    n = len(split.train)
    test_batch = assemble_batch(split.test, distributions)
    val_batch = assemble_batch(validation, distributions) if validation is not None and len(validation) else None

    reports = []
    best = None
    best_state = None
    # divergence is detected explicitly below, whatever numpy's error state is
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            total = 0.0
            n_batches = 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                optimizer.zero_grad()
                pred = model.forward(batch.take(idx))
                loss, grad = loss_fn(pred, targets[idx])
                if not math.isfinite(loss):
                    raise NumericalError(
                        f"non-finite {config.loss_kind} loss at epoch {epoch}, batch {n_batches}; lr={config.lr} may be too high"
                    )
                model.backward(grad)
                optimizer.step()
                total += loss
                n_batches += 1
            test_mae, test_rmse = mae_rmse(_predict(model, test_batch, config.clamp_predictions), split.test.qos)
            val_mae = None
            if val_batch is not None:
                val_mae, _ = mae_rmse(_predict(model, val_batch, config.clamp_predictions), validation.qos)
            if not (math.isfinite(test_rmse) and (val_mae is None or math.isfinite(val_mae))):
                raise NumericalError(f"non-finite evaluation metrics at epoch {epoch}; lr={config.lr} may be too high")
            report = EvalReport(epoch, total / n_batches, test_mae, test_rmse, time.perf_counter() - t0, val_mae)
            reports.append(report)
            log.info(
                "epoch %d loss %.4f test MAE %.4f RMSE %.4f%s", epoch, report.train_loss, test_mae, test_rmse,
                "" if val_mae is None else f" val MAE {val_mae:.4f}",
            )
            key = (lambda r: r.test_mae) if val_mae is None else (lambda r: r.val_mae)
            if best is None or key(report) < key(best):
                best = report
                best_state = model.state_dict()
    model.load_state_dict(best_state)
    return ExperimentResult(config, reports, best, best_state)


def holdout_validation(split: DatasetSplit, fraction: float, seed: int) -> tuple[DatasetSplit, RecordSet]:
    """Move a random ``fraction`` of the training records into a validation set."""
    rng = sub_rng(seed, "validation")
    n = len(split.train)
    n_val = int(fraction * n)
    perm = rng.permutation(n)
    keep = np.sort(perm[n_val:])
    val = np.sort(perm[:n_val])
    fit = DatasetSplit(split.train[keep], split.test, split.density, split.seed, split.train_indices[keep])
    return fit, split.train[val]


class SweepData(NamedTuple):
    records: RecordSet
    vocab_sizes: VocabSizes


@dataclass(eq=False)
class CellResult:
    variant: str
    density: float
    seed: int
    config_hash: str
    reports: list
    best: EvalReport
    split_manifest: str | None = None
    test_predictions: np.ndarray | None = None
    test_targets: np.ndarray | None = None
    model: PlresModel | None = None


def make_split(records: RecordSet, density: float, seed: int) -> DatasetSplit:
    return split_by_density(records, density, derive_seed(seed, "split"))


def split_manifest_name(density: float, seed: int) -> str:
    return f"split_d{density:g}_s{seed}.json"


def run_cell(
    data: SweepData,
    variant: str,
    config,
    density: float,
    seed: int,
    splits_dir: str | None = None,
    keep_predictions: bool = False,
    keep_model: bool = False,
) -> CellResult:
    """Train/evaluate one (arm, density, seed) cell from scratch."""
    split = make_split(data.records, density, seed)
    manifest = None
    if splits_dir is not None:
        manifest = split_manifest_name(density, seed)
        path = os.path.join(splits_dir, manifest)
        if not os.path.exists(path):
            split.save_manifest(path)

    if isinstance(config, BaselineConfig):
        t0 = time.perf_counter()
        cf = UIPCC(training_matrix(split.train, data.vocab_sizes.n_users, data.vocab_sizes.n_services),
                   config.top_k, config.lam)
        pred = cf.predict(split.test.user_id, split.test.service_id)
        mae, rmse = mae_rmse(pred, split.test.qos)
        report = EvalReport(0, float("nan"), mae, rmse, time.perf_counter() - t0)
        return CellResult(variant, density, seed, config.config_hash(), [report], report, manifest,
                          pred if keep_predictions else None, split.test.qos if keep_predictions else None)

    config = replace(config, density=density, seed=seed, model=replace(config.model, seed=seed))
    validation = None
    if config.validation_fraction > 0:
        split, validation = holdout_validation(split, config.validation_fraction, seed)
    scheme = BinningScheme(config.model.k_intervals, config.qos_max)
    dists = compute_distributions(split.train, scheme, data.vocab_sizes.n_users, data.vocab_sizes.n_services)
    model = PlresModel(config.model, data.vocab_sizes)
    log.info("cell %s density=%g seed=%d: %d train / %d test", variant, density, seed, len(split.train), len(split.test))
    result = train(model, split, dists, config, validation)
    pred = predict_records(model, split.test, dists, config.clamp_predictions) if keep_predictions else None
    return CellResult(variant, density, seed, config.config_hash(), result.reports, result.best, manifest,
                      pred, split.test.qos if keep_predictions else None, model if keep_model else None)


_WORKER_DATA: SweepData | None = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def _worker(args):
    return run_cell(_WORKER_DATA, *args)


def run_density_sweep(
    data: SweepData,
    arms: dict,
    densities,
    seeds,
    workers: int = 1,
    splits_dir: str | None = None,
    keep_predictions: bool = False,
) -> list[CellResult]:
    """Run every (arm, density, seed) cell; results come back in arm, density, seed order.

    ``arms`` maps a variant name to a :class:`TrainConfig` or :class:`BaselineConfig`.
    """
    for d in densities:
        if not 0 < d <= 1:
            raise ValueError(f"density must be in (0, 1], got {d}")
    if splits_dir is not None:
        os.makedirs(splits_dir, exist_ok=True)
    cells = [(name, cfg, float(d), int(s)) for name, cfg in arms.items() for d in densities for s in seeds]
    return run_cells(data, cells, workers, splits_dir, keep_predictions)


def run_cells(
    data: SweepData,
    cells: list,
    workers: int = 1,
    splits_dir: str | None = None,
    keep_predictions: bool = False,
) -> list[CellResult]:
    """Run arbitrary ``(variant, config, density, seed)`` cells, in order, optionally in parallel."""
    jobs = [(*c, splits_dir, keep_predictions) for c in cells]
    if workers <= 1 or len(jobs) <= 1:
        return [run_cell(data, *j) for j in jobs]
    import multiprocessing

    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(min(workers, len(jobs)), mp_context=ctx, initializer=_init_worker,
                             initargs=(data,)) as pool:
        return list(pool.map(_worker, jobs))


RESULT_COLUMNS = ["variant", "density", "seed", "epoch", "train_loss", "test_mae", "test_rmse"]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_results_csv(path, cells: list[CellResult]) -> None:
    """Per-epoch rows. Wall-clock times are kept out so reruns compare byte for byte."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for c in cells:
            for r in c.reports:
                w.writerow([c.variant, repr(c.density), c.seed, r.epoch, _fmt(r.train_loss),
                            _fmt(r.test_mae), _fmt(r.test_rmse)])


def write_table_csv(path, cells: list[CellResult], metric: str = "test_mae") -> None:
    """Variant x density table of the best-epoch metric, averaged over seeds."""
    variants = list(dict.fromkeys(c.variant for c in cells))
    densities = sorted({c.density for c in cells})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant"] + [f"{d:g}" for d in densities])
        for v in variants:
            row = [v]
            for d in densities:
                vals = [getattr(c.best, metric) for c in cells if c.variant == v and c.density == d]
                row.append(f"{np.mean(vals):.3f}" if vals else "")
            w.writerow(row)


def summarize(cells: list[CellResult], significance: tuple[str, str] | None = None) -> dict:
    out = {"cells": []}
    for c in cells:
        out["cells"].append({
            "variant": c.variant,
            "density": c.density,
            "seed": c.seed,
            "config_hash": c.config_hash,
            "split_manifest": c.split_manifest,
            "best_epoch": c.best.epoch,
            "best_test_mae": c.best.test_mae,
            "best_test_rmse": c.best.test_rmse,
            "epochs_run": len(c.reports),
        })
    if significance is not None:
        a_name, b_name = significance
        tests = []
        by_key = {(c.variant, c.density, c.seed): c for c in cells}
        for c in cells:
            if c.variant != a_name:
                continue
            other = by_key.get((b_name, c.density, c.seed))
            if other is None or c.test_predictions is None or other.test_predictions is None:
                continue
            err_a = np.abs(c.test_predictions - c.test_targets)
            err_b = np.abs(other.test_predictions - other.test_targets)
            stat, p = wilcoxon_signed_rank(err_a, err_b)
            tests.append({"a": a_name, "b": b_name, "density": c.density, "seed": c.seed,
                          "statistic": stat, "p_value": p,
                          "median_abs_error_a": float(np.median(err_a)), "median_abs_error_b": float(np.median(err_b))})
        out["wilcoxon"] = tests
    return out


def write_summary_json(path, cells: list[CellResult], significance=None, extra: dict | None = None) -> None:
    doc = summarize(cells, significance)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
