import csv
import json
import math

import numpy as np
import pytest

from resqos.dataset import InvocationRecord, RecordSet, split_by_density
from resqos.features import BinningScheme, compute_distributions
from resqos.model import PlresConfig, PlresModel, VocabSizes
from resqos.training import (
    BaselineConfig,
    NumericalError,
    SweepData,
    TrainConfig,
    evaluate,
    mae_rmse,
    run_cell,
    run_density_sweep,
    summarize,
    train,
    write_results_csv,
    write_table_csv,
)

SMALL = PlresConfig(n_blocks=1, id_embed_dim=4, loc_embed_dim=4)


@pytest.fixture(scope="module")
def sweep_data(synth_data):
    return SweepData(synth_data.records, VocabSizes.from_dataset(synth_data))


def test_metric_examples():
    assert mae_rmse([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)
    assert mae_rmse([2.0, 0.0], [1.0, 1.0]) == (1.0, 1.0)
    mae, rmse = mae_rmse([0.0, 3.0], [0.0, 0.0])
    assert mae == 1.5
    assert rmse == pytest.approx(2.1213203435596424, abs=1e-15)
    with pytest.raises(ValueError):
        mae_rmse([], [])


def test_evaluate_rejects_empty(sweep_data):
    model = PlresModel(SMALL, sweep_data.vocab_sizes)
    d = compute_distributions(sweep_data.records, BinningScheme(), sweep_data.vocab_sizes.n_users,
                              sweep_data.vocab_sizes.n_services)
    with pytest.raises(ValueError):
        evaluate(model, RecordSet.empty(), d)


def test_memorizes_single_record():
    recs = RecordSet.from_records([InvocationRecord(0, 0, 1.5, 0, 0, 0, 0), InvocationRecord(1, 1, 0.3, 0, 0, 0, 0)])
    sizes = VocabSizes(2, 2, 1, 1, 1, 1)
    split = split_by_density(recs, 0.5, 0)
    d = compute_distributions(split.train, BinningScheme(), 2, 2)
    model = PlresModel(SMALL, sizes)
    result = train(model, split, d, TrainConfig(lr=0.01, max_epochs=300, batch_size=1, density=0.5, model=SMALL))
    # the restored model is chosen on the held-out record, so look at the training loss trace
    assert result.reports[-1].train_loss < 0.01


def _run(sweep_data, **kw):
    cfg = TrainConfig(max_epochs=kw.pop("epochs", 3), model=kw.pop("model", SMALL), **kw)
    return run_cell(sweep_data, "PLRes", cfg, cfg.density, cfg.seed, keep_predictions=True)


def test_training_is_deterministic_and_selects_minimum(sweep_data):
    a = _run(sweep_data, density=0.2, seed=5)
    b = _run(sweep_data, density=0.2, seed=5)
    assert [r.test_mae for r in a.reports] == [r.test_mae for r in b.reports]
    np.testing.assert_array_equal(a.test_predictions, b.test_predictions)
    assert a.best.test_mae == min(r.test_mae for r in a.reports)
    # the restored model is the best epoch's
    assert mae_rmse(a.test_predictions, a.test_targets)[0] == pytest.approx(a.best.test_mae, rel=1e-12)
    for r in a.reports:
        assert r.test_rmse >= r.test_mae
        assert math.isfinite(r.train_loss)


def test_huge_learning_rate_is_numerical_error(sweep_data):
    cfg = TrainConfig(lr=1e300, max_epochs=3, loss_kind="mse", model=SMALL)
    with pytest.raises(NumericalError):
        run_cell(sweep_data, "x", cfg, 0.2, 0)


def test_validation_mode_selects_on_validation(sweep_data):
    cell = _run(sweep_data, density=0.2, validation_fraction=0.2)
    assert all(r.val_mae is not None for r in cell.reports)
    assert cell.best.val_mae == min(r.val_mae for r in cell.reports)


def test_config_validation():
    for bad in ({"lr": 0}, {"batch_size": 0}, {"max_epochs": 0}, {"loss_kind": "huber"}, {"density": 1.5}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_sweep_rows_and_config_hash(sweep_data, tmp_path):
    cfg = TrainConfig(max_epochs=2, model=SMALL)
    cells = run_density_sweep(sweep_data, {"PLRes": cfg, "UIPCC": BaselineConfig()}, [0.1], [0, 1],
                              splits_dir=str(tmp_path / "splits"))
    assert [(c.variant, c.seed) for c in cells] == [("PLRes", 0), ("PLRes", 1), ("UIPCC", 0), ("UIPCC", 1)]
    assert cells[0].config_hash == cells[1].config_hash
    assert cells[0].split_manifest != cells[1].split_manifest
    s0 = json.loads((tmp_path / "splits" / cells[0].split_manifest).read_text())
    s1 = json.loads((tmp_path / "splits" / cells[1].split_manifest).read_text())
    assert s0["train_indices"] != s1["train_indices"]
    # both arms share each seed's split
    assert cells[0].split_manifest == cells[2].split_manifest

    write_results_csv(tmp_path / "r.csv", cells)
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == ["variant", "density", "seed", "epoch", "train_loss", "test_mae", "test_rmse"]
    assert len(rows) == 2 * 2 + 2
    write_table_csv(tmp_path / "t.csv", cells)
    table = list(csv.reader(open(tmp_path / "t.csv")))
    assert table[0] == ["variant", "0.1"] and [r[0] for r in table[1:]] == ["PLRes", "UIPCC"]
    summary = summarize(cells)
    assert len(summary["cells"]) == 4


def test_parallel_sweep_matches_serial(sweep_data):
    cfg = TrainConfig(max_epochs=2, model=SMALL)
    serial = run_density_sweep(sweep_data, {"a": cfg}, [0.1, 0.2], [0], workers=1)
    parallel = run_density_sweep(sweep_data, {"a": cfg}, [0.1, 0.2], [0], workers=2)
    assert [c.best.test_mae for c in serial] == [c.best.test_mae for c in parallel]


def test_wilcoxon_summary(sweep_data):
    cfg = TrainConfig(max_epochs=2, model=SMALL)
    cells = run_density_sweep(sweep_data, {"PLRes": cfg, "UIPCC": BaselineConfig()}, [0.1], [0],
                              keep_predictions=True)
    summary = summarize(cells, ("PLRes", "UIPCC"))
    [test] = summary["wilcoxon"]
    assert 0 <= test["p_value"] <= 1


def test_density_trend_on_synthetic(sweep_data):
    cfg = TrainConfig(max_epochs=15, model=PlresConfig())
    cells = run_density_sweep(sweep_data, {"PLRes": cfg}, [0.05, 0.3], [0])
    assert cells[1].best.test_mae < cells[0].best.test_mae
