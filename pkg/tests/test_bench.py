import pytest
import numpy as np
import pandas as pd

import kanformer.bench as bench
from kanformer.bench import (
    BenchTable,
    ablation_cells,
    bench_ablation,
    bench_config,
    bench_feynman,
    check_equations,
    emit_table,
    render_csv,
    render_markdown,
    run_cells,
    summarize,
    table_path,
)
from kanformer.errors import ConfigError, ContractError
from kanformer.utils import config_diff


def _table():
    frame = pd.DataFrame({"Feynman Eq.": ["I.12.1", "I.25.13"], "RMSE": [0.5, 0.0123456789]})
    return BenchTable("feynman", frame, {"RMSE": "min"}, "0123456789abcdef")


def test_unknown_equations_fail_before_training(tiny_cfg, monkeypatch):
    def no_training(*args, **kwargs):
        raise AssertionError("training started")

    monkeypatch.setattr(bench, "run_training", no_training)
    with pytest.raises(ConfigError):
        bench_feynman(["I.12.1", "I.99.1"], tiny_cfg)


def test_check_equations_uses_registry_order():
    assert check_equations(["I.25.13", "I.12.1"]) == ["I.12.1", "I.25.13"]


def test_empty_feynman_table(tiny_cfg):
    table = bench_feynman([], tiny_cfg)
    assert len(table) == 0
    assert table.columns == ["Feynman Eq.", "RMSE", "Fingerprint"]


def test_bench_feynman_rows(tiny_cfg):
    table = bench_feynman(["I.25.13", "I.12.1"], tiny_cfg, workers=1)
    assert table.frame["Feynman Eq."].tolist() == ["I.12.1", "I.25.13"]
    assert np.all(table.frame["RMSE"] > 0)
    assert table.frame["Fingerprint"].nunique() == 2


def test_bench_config_applies_desk_scale(tiny_cfg):
    cfg = bench_config(tiny_cfg)
    assert cfg.model.dim == tiny_cfg.bench.dim
    assert cfg.train.max_epochs == tiny_cfg.bench.max_epochs
    assert cfg.wandb.enable is False
    # 8 // 2 heads would leave 4-wide heads
    assert cfg.model.heads == 4


def test_ablation_cells_differ_in_one_key(tiny_cfg):
    cells = ablation_cells("topk", [1, 2], tiny_cfg)
    assert [(v, d) for v, d, _ in cells] == [(1, "cifar10"), (2, "cifar10")]
    assert config_diff(cells[0][2], cells[1][2]) == {"moe.top_k": (1, 2)}


@pytest.mark.parametrize(
    "axis,values",
    [
        ("topk", [0]),
        ("topk", [1, 5]),
        ("topk", [2, 2]),
        ("experts", [3]),
        ("experts", [1]),
        ("experts", []),
        ("experts", [4, 2, 4]),
        ("depth", [2]),
    ],
)
def test_ablation_rejects_bad_values(axis, values, tiny_cfg, monkeypatch):
    monkeypatch.setattr(bench, "run_training", None)
    with pytest.raises(ConfigError):
        bench_ablation(axis, values, tiny_cfg)


def test_ablation_experts_must_cover_top_k(tiny_cfg):
    tiny_cfg.moe.top_k = 4
    with pytest.raises(ConfigError):
        ablation_cells("experts", [2], tiny_cfg)


def test_bench_ablation_on_cifar(tiny_cfg, cifar10_dir):
    tiny_cfg.data.cifar_dir = str(cifar10_dir)
    tiny_cfg.data.classes = [0, 1]
    table = bench_ablation("topk", [1, 2], tiny_cfg, workers=1)
    assert table.columns == ["Top-k", "CIFAR-10 (Acc1)", "CIFAR-10 (Acc5)", "Fingerprint"]
    assert table.frame["Top-k"].tolist() == [1, 2]
    assert table.frame["CIFAR-10 (Acc1)"].between(0.0, 1.0).all()
    # two classes leave top-5 undefined
    assert table.frame["CIFAR-10 (Acc5)"].isna().all()
    assert "| nan |" in render_markdown(table)


def test_run_cells_is_independent_of_the_worker_count(tiny_cfg):
    cells = [bench.cell_config(bench_config(tiny_cfg), f"feynman:{eq}") for eq in ("I.12.1", "I.14.3")]
    serial = run_cells(cells, workers=1)
    parallel = run_cells(cells, workers=2)
    assert [[r.metrics for r in runs] for runs in serial] == [[r.metrics for r in runs] for runs in parallel]
    assert [runs[0].task for runs in parallel] == ["feynman:I.12.1", "feynman:I.14.3"]


def test_summarize_over_seeds():
    runs = [bench.BenchResult("t", "f", {"rmse": v}, 0.0, s) for s, v in enumerate([1.0, 3.0])]
    assert summarize(runs, "rmse") == (2.0, pytest.approx(np.sqrt(2.0)))
    nan_runs = [bench.BenchResult("t", "f", {"acc5": np.nan}, 0.0, 0)]
    assert all(np.isnan(summarize(nan_runs, "acc5")))


def test_render_markdown_marks_the_best_value():
    text = render_markdown(_table())
    lines = text.splitlines()
    assert lines[0] == "| Feynman Eq. | RMSE |"
    assert lines[1] == "|---|---|"
    assert lines[2] == "| I.12.1 | 0.5 |"
    assert lines[3] == "| I.25.13 | **0.0123457** |"
    assert render_markdown(_table()) == text


def test_render_csv_reparses():
    text = render_csv(_table())
    assert text.splitlines()[0] == "Feynman Eq.,RMSE,RMSE_best"
    assert render_csv(_table()) == text


def test_emit_table(tmp_path):
    table = _table()
    path = emit_table(table, "csv", table_path(tmp_path, table, "csv"))
    assert path == tmp_path / "tables" / "feynman_01234567.csv"
    df = pd.read_csv(path)
    assert df["RMSE_best"].tolist() == [False, True]
    md = emit_table(table, "markdown", table_path(tmp_path, table, "markdown"))
    assert md.suffix == ".md"
    assert md.read_text() == render_markdown(table)


def test_emit_table_errors(tmp_path):
    with pytest.raises(ContractError):
        emit_table(BenchTable("empty", pd.DataFrame()), "markdown", tmp_path / "t.md")
    with pytest.raises(ConfigError):
        emit_table(_table(), "html", tmp_path / "t.html")
