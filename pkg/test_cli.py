#!/usr/bin/env python3
"""End-to-end runs of the command-line interface."""
import numpy as np
import pytest

from app import main
from pipeline.csv_io import read_table

FAST = ['--trees-margin', '2', '--trees-copula', '6', '--seed', '3']


@pytest.fixture
def simulated(tmp_path):
    path = tmp_path / "train.csv"
    assert main(['simulate', '--scenario', 'B', '--n', '400', '--seed', '1', '--out', str(path)]) == 0
    return path


@pytest.fixture
def model(tmp_path, simulated):
    path = tmp_path / "model.tb"
    assert main(['train', '--data', str(simulated), '--out', str(path)] + FAST) == 0
    return path


def test_simulate_writes_reference_densities(simulated, tmp_path):
    data, names = read_table(simulated)
    reference, ref_names = read_table(tmp_path / "train_logdensity.csv")
    assert names == ['x1', 'x2'] and data.shape == (400, 2)
    assert ref_names == ['true_log_density'] and reference.shape == (400, 1)


def test_train_reports_both_scales(simulated, tmp_path, capsys):
    assert main(['train', '--data', str(simulated), '--out', str(tmp_path / "m.tb")] + FAST) == 0
    out = capsys.readouterr().out
    assert "trained 10 trees on 400 rows x 2 columns" in out
    assert "cube scale" in out and "original scale" in out


def test_training_is_deterministic(simulated, tmp_path):
    first, second = tmp_path / "a.tb", tmp_path / "b.tb"
    assert main(['train', '--data', str(simulated), '--out', str(first)] + FAST) == 0
    assert main(['train', '--data', str(simulated), '--out', str(second)] + FAST) == 0
    assert first.read_bytes() == second.read_bytes()


def test_zero_trees_gives_uniform_model(simulated, tmp_path):
    path = tmp_path / "uniform.tb"
    out = tmp_path / "density.csv"
    assert main(['train', '--data', str(simulated), '--out', str(path), '--trees-margin', '0',
                 '--trees-copula', '0']) == 0
    points = tmp_path / "points.csv"
    points.write_text("0.25,0.5\n0.9,0.1\n")
    assert main(['density', '--model', str(path), '--data', str(points), '--out', str(out)]) == 0
    values, _ = read_table(out)
    np.testing.assert_array_equal(values[:, 0], [0.0, 0.0])


def test_density_on_original_scale(model, simulated, tmp_path, capsys):
    out = tmp_path / "density.csv"
    assert main(['density', '--model', str(model), '--data', str(simulated), '--original-scale',
                 '--out', str(out)]) == 0
    values, names = read_table(out)
    assert names == ['log_density'] and values.shape == (400, 1)
    assert np.all(np.isfinite(values))
    assert "predictive score" in capsys.readouterr().out


def test_sampling_is_seeded(model, tmp_path):
    first, second = tmp_path / "s1.csv", tmp_path / "s2.csv"
    for path in (first, second):
        assert main(['sample', '--model', str(model), '--n', '50', '--seed', '4', '--out', str(path)]) == 0
    assert first.read_text() == second.read_text()
    draws, _ = read_table(first)
    assert draws.shape == (50, 2) and draws.min() > 0.0 and draws.max() <= 1.0


def test_importance_table(model, tmp_path):
    out = tmp_path / "importance.csv"
    assert main(['importance', '--model', str(model), '--out', str(out)]) == 0
    table, names = read_table(out)
    assert names == ['dimension', 'importance', 'share']
    np.testing.assert_array_equal(table[:, 0], [1.0, 2.0])
    assert table[:, 2].sum() == pytest.approx(1.0)


def test_cv_table(simulated, tmp_path, capsys):
    out = tmp_path / "cv.csv"
    assert main(['cv', '--data', str(simulated), '--c0-grid', '0.1,0.5', '--gamma-grid', '0.0', '--folds', '2',
                 '--out', str(out)] + FAST) == 0
    table, names = read_table(out)
    assert names == ['c0', 'gamma', 'mean', 'fold1', 'fold2']
    assert table.shape == (2, 5)
    assert "selected c0=" in capsys.readouterr().out


def test_evaluate_with_trajectory(model, capsys):
    assert main(['evaluate', '--model', str(model), '--scenario', 'B', '--mc', '2000',
                 '--trajectory', '0,4']) == 0
    out = capsys.readouterr().out
    assert "K=0: KL" in out and "K=4: KL" in out and "K=10: KL" in out
    assert "points used" in out


def test_missing_data_file(tmp_path, capsys):
    code = main(['train', '--data', str(tmp_path / "nope.csv"), '--out', str(tmp_path / "m.tb")] + FAST)
    assert code == 3
    assert "error: data: " in capsys.readouterr().err


def test_non_numeric_cell(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n4,5\n")
    assert main(['train', '--data', str(path), '--out', str(tmp_path / "m.tb")] + FAST) == 3
    assert "b has a non-numeric cell" in capsys.readouterr().err


def test_constant_column(tmp_path):
    path = tmp_path / "flat.csv"
    path.write_text("a,b\n1,2\n3,2\n4,2\n")
    assert main(['train', '--data', str(path), '--out', str(tmp_path / "m.tb")] + FAST) == 3


def test_corrupt_model(tmp_path, simulated, capsys):
    path = tmp_path / "broken.tb"
    path.write_text("{}\n")
    assert main(['density', '--model', str(path), '--data', str(simulated)]) == 4
    assert "error: model: " in capsys.readouterr().err


def test_invalid_learning_rate(simulated, tmp_path):
    assert main(['train', '--data', str(simulated), '--out', str(tmp_path / "m.tb"), '--c0', '0']) == 2


def test_unknown_scenario(tmp_path):
    assert main(['simulate', '--scenario', 'Z', '--out', str(tmp_path / "z.csv")]) == 2


def test_missing_argument(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(['train'])
    assert excinfo.value.code == 2
    assert "error: usage:" in capsys.readouterr().err


def test_history_needs_ledger(monkeypatch):
    from models import database
    monkeypatch.setattr(database, "engine", None)
    assert main(['history']) == 2


def test_simulate_needs_positive_size(tmp_path, capsys):
    assert main(['simulate', '--scenario', 'A', '--n', '0', '--out', str(tmp_path / "a.csv")]) == 2
    assert "error: usage: " in capsys.readouterr().err


def test_data_that_is_not_utf8(tmp_path, capsys):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"x1,x2\n0.1,0.2\n\xff\xfe,0.3\n")
    assert main(['train', '--data', str(path), '--out', str(tmp_path / "m.tb")] + FAST) == 3
    assert "not UTF-8 text (line 3)" in capsys.readouterr().err
