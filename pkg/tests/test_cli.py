import json
import pytest

from omegaconf import OmegaConf

from kanformer.cli import main


@pytest.fixture
def trained(tmp_path, tiny_flags):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), *tiny_flags]) == 0
    return out


def test_train_writes_run_directory(trained):
    for name in ("config.yaml", "provenance.yaml", "metrics.jsonl", "checkpoint/manifest", "checkpoint/params.bin"):
        assert (trained / name).is_file(), name
    cfg = OmegaConf.load(trained / "config.yaml")
    assert cfg.model.dim == 8
    assert cfg.output_dir == str(trained)
    provenance = OmegaConf.load(trained / "provenance.yaml")
    assert provenance["model.dim"] == "flag"
    assert provenance["moe.top_k"] == "default"


def test_eval_reports_checkpoint_metrics(trained, tmp_path, capsys):
    capsys.readouterr()
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint"), "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    results = json.loads(line)
    assert results["task"] == "feynman:I.12.1"
    assert results["rmse"] > 0
    assert json.loads((out / "eval_metrics.json").read_text()) == results


@pytest.mark.parametrize(
    "extra",
    [
        ["--task", "feynman:nope"],
        ["--moe.num_experts", "3"],
        ["--model.depth", "3"],
        ["stray"],
    ],
)
def test_train_config_errors_exit_2(extra, tmp_path, tiny_flags, capsys):
    assert main(["train", "--out", str(tmp_path / "run"), *tiny_flags, *extra]) == 2
    assert "config error" in capsys.readouterr().err


def test_train_refuses_a_non_empty_output_dir(tmp_path, tiny_flags):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["train", "--out", str(out), *tiny_flags]) == 2
    assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]


def test_train_needs_an_output_dir(tiny_flags):
    assert main(["train", *tiny_flags]) == 2


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nowhere")]) == 2


def test_argparse_errors_exit_2():
    assert main([]) == 2
    assert main(["serve"]) == 2
    assert main(["ablate", "--axis", "depth", "--values", "1"]) == 2


def test_help_lists_config_keys(capsys):
    assert main(["train", "--help"]) == 0
    text = capsys.readouterr().out
    assert "--model.dim" in text
    assert "--moe.top_k" in text


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("encoder") for line in lines)
    assert all(line.endswith("ok") for line in lines)


def test_bench_feynman(tmp_path, tiny_flags):
    out = tmp_path / "bench"
    assert main(["bench", "feynman", "--out", str(out), "--equations", "I.12.1,I.25.13", *tiny_flags]) == 0
    (table,) = (out / "tables").glob("feynman_*.md")
    lines = table.read_text().splitlines()
    assert lines[0].startswith("| Feynman Eq. | RMSE |")
    assert [line.split(" | ")[0] for line in lines[2:]] == ["| I.12.1", "| I.25.13"]


def test_bench_feynman_needs_equations(tmp_path, tiny_flags):
    assert main(["bench", "feynman", "--out", str(tmp_path / "bench"), *tiny_flags]) == 2


def test_ablate_rejects_top_k_zero(tmp_path, tiny_flags):
    assert main(["ablate", "--axis", "topk", "--values", "0", "--out", str(tmp_path / "abl"), *tiny_flags]) == 2


def test_ablate_rejects_repeated_values(tmp_path, tiny_flags):
    out = tmp_path / "abl"
    assert main(["ablate", "--axis", "topk", "--values", "2,2", "--out", str(out), *tiny_flags]) == 2
    assert not (out / "tables").exists()
