"""
Command-line entry point.

    python -m kanformer train --out runs/i12 --task feynman:I.12.1
    python -m kanformer eval --checkpoint runs/i12/checkpoint
    python -m kanformer gradcheck [--tol 1e-4] [--seed 0]
    python -m kanformer bench {feynman,compare,classify} --out runs/bench [--equations I.12.1,I.25.13]
    python -m kanformer ablate --axis {experts,topk} --values 1,2,3 --out runs/ablate

Besides the command flags below, every `--section.key value` sets a config key;
keys that do not exist are rejected.

Exit codes: 0 on success, 2 on configuration errors and missing checkpoints,
1 on any other failure.
"""
import sys
import json
import tqdm
import argparse

from pathlib import Path
from typing import List, Optional, Sequence

from omegaconf import DictConfig

from kanformer.bench import (
    bench_ablation,
    bench_classification,
    bench_compare,
    bench_feynman,
    emit_table,
    render_markdown,
    table_path,
)
from kanformer.data import load_task
from kanformer.errors import ConfigError, KanformerError
from kanformer.eval import run_gradcheck_suite
from kanformer.train import run_training
from kanformer.utils import (
    describe_keys,
    load_checkpoint,
    load_config,
    make_streams,
    override_config,
    remap_flags,
    resolve_config,
    save_resolved,
    tune_one_epoch,
)

COMMANDS = ("train", "eval", "gradcheck", "bench", "ablate")
BENCH_SUITES = ("feynman", "compare", "classify")


def _csv_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def get_args_parser(with_keys: bool = False) -> argparse.ArgumentParser:
    epilog = None
    if with_keys:
        epilog = "recognized config keys:\n" + describe_keys()
    formatter = argparse.RawDescriptionHelpFormatter

    parser = argparse.ArgumentParser(
        "kanformer", description="MLP-KAN transformer training and benchmarks", allow_abbrev=False
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str, mutating: bool = True):
        p = sub.add_parser(name, help=help, epilog=epilog, formatter_class=formatter, allow_abbrev=False)
        p.add_argument("--config", type=str, default=None, help="YAML file merged over the defaults")
        if mutating:
            p.add_argument("--out", type=str, default=None, help="output directory (required)")
            p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        return p

    command("train", "train one model on config.task")

    p = command("eval", "evaluate a checkpoint on its test split", mutating=False)
    p.add_argument("--checkpoint", type=str, required=True, help="checkpoint directory")
    p.add_argument("--out", type=str, default=None, help="optional directory for eval_metrics.json")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")

    p = sub.add_parser(
        "gradcheck", help="finite-difference gradient suite (f64)", epilog=epilog,
        formatter_class=formatter, allow_abbrev=False,
    )
    p.add_argument("--tol", type=float, default=1e-4, help="maximum relative error")
    p.add_argument("--seed", type=int, default=0, help="seed of the random evaluation points")

    p = command("bench", "Feynman and classification benchmark tables")
    p.add_argument("suite", choices=BENCH_SUITES)
    p.add_argument("--equations", type=_csv_list, default=None, help="comma-separated Feynman ids")

    p = command("ablate", "experts / top-k ablation grid")
    p.add_argument("--axis", choices=("experts", "topk"), required=True)
    p.add_argument("--values", type=_int_list, required=True, help="comma-separated integers")
    return parser


def prepare_output_dir(out: Optional[str], force: bool, required: bool = True) -> Optional[Path]:
    if out is None:
        if required:
            raise ConfigError("--out: an output directory is required for this command")
        return None
    path = Path(out)
    if path.exists() and not path.is_dir():
        raise ConfigError(f"--out: {path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise ConfigError(f"--out: {path} is not empty; pass --force to write into it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolved_config(args, extra: Sequence[str]):
    cfg, provenance = load_config(args.config, remap_flags(extra))
    return resolve_config(cfg), provenance


def cmd_train(args, extra: Sequence[str]) -> int:
    cfg, provenance = resolved_config(args, extra)
    output_dir = prepare_output_dir(args.out, args.force)
    cfg.output_dir = str(output_dir)
    save_resolved(cfg, provenance, output_dir)

    result = run_training(cfg, output_dir)
    if result.best_epoch is not None:
        tqdm.tqdm.write(
            f"best {result.tracking}: {result.best_value:.6g} at epoch {result.best_epoch}"
        )
    return 0


def cmd_eval(args, extra: Sequence[str]) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_dir():
        raise ConfigError(f"--checkpoint: checkpoint directory not found: {ckpt}")
    output_dir = prepare_output_dir(args.out, args.force, required=False)

    model, ckpt_cfg, task = load_checkpoint(ckpt)
    cfg = resolve_config(override_config(ckpt_cfg, remap_flags(extra)))
    _, data = load_task(cfg, make_streams(cfg.seed)["data"])
    results = tune_one_epoch(model, data.test, task)
    results.pop("lowest_so_far", None)

    line = json.dumps({"checkpoint": str(ckpt), "task": task.name, **results})
    print(line)
    if output_dir is not None:
        (output_dir / "eval_metrics.json").write_text(line + "\n")
    return 0


def cmd_gradcheck(args, extra: Sequence[str]) -> int:
    if extra:
        raise ConfigError(f"gradcheck takes no config keys, got {list(extra)}")
    failed = []
    for name, report in run_gradcheck_suite(args.tol, args.seed):
        status = "ok" if report.passed else "FAIL"
        print(f"{name:<20} max_rel_err={report.max_rel_err:.3e}  {status}")
        if not report.passed:
            failed.append(f"{name} (worst at {report.worst})")
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _write_table(table, cfg: DictConfig, output_dir: Path) -> Path:
    fmt = cfg.bench.format
    path = emit_table(table, fmt, table_path(output_dir, table, fmt))
    tqdm.tqdm.write(render_markdown(table))
    tqdm.tqdm.write(f"table written to {path}")
    return path


def cmd_bench(args, extra: Sequence[str]) -> int:
    cfg, provenance = resolved_config(args, extra)
    if args.suite in ("feynman", "compare") and args.equations is None:
        raise ConfigError("--equations: comma-separated Feynman ids are required for this suite")
    output_dir = prepare_output_dir(args.out, args.force)
    cfg.output_dir = str(output_dir)
    save_resolved(cfg, provenance, output_dir)

    if args.suite == "feynman":
        table = bench_feynman(args.equations, cfg)
    elif args.suite == "compare":
        table = bench_compare(args.equations, cfg)
    else:
        table = bench_classification(cfg)
    _write_table(table, cfg, output_dir)
    return 0


def cmd_ablate(args, extra: Sequence[str]) -> int:
    cfg, provenance = resolved_config(args, extra)
    output_dir = prepare_output_dir(args.out, args.force)
    cfg.output_dir = str(output_dir)
    save_resolved(cfg, provenance, output_dir)

    table = bench_ablation(args.axis, args.values, cfg)
    _write_table(table, cfg, output_dir)
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    wants_help = any(a in ("-h", "--help") for a in argv)
    parser = get_args_parser(with_keys=wants_help)
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    try:
        return HANDLERS[args.command](args, extra)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except KanformerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
