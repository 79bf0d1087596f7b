"""Command-line surface: gen-data, train, eval, infer, bench and ablate.

Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import yaml

from .bench import benchmark
from .config import ConfigurationError, RunConfig, config_to_dict, load_config, parse_config_dict, parse_overrides
from .container import ContainerFormatError, read_container, write_container
from .frames import dump_frames
from .metrics import DataError, MetricReport, parse_report_lines, report_from_mapping, summarize
from .network import SSA2DNetwork
from .synth import CLIP_TENSORS, ClipRecord, write_dataset
from .tensor import ContractError, ShapeError
from .trainer import NonFiniteLossError, evaluate_dataset, infer, load_checkpoint, steps_to_threshold, train

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

ABLATION_FLAGS = {
    "no_ap_infusion": "network.ap_infusion",
    "no_ssa_masking": "network.ssa_masking",
    "no_atrous": "network.atrous",
    "no_multi_scale": "network.multi_scale",
}

ABLATION_VARIANTS = [
    ("full", {}),
    ("no_ap_infusion", {"network.ap_infusion": False}),
    ("no_ssa_masking", {"network.ssa_masking": False}),
    ("no_atrous", {"network.atrous": False}),
    ("no_multi_scale", {"network.multi_scale": False}),
]


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = parse_overrides(getattr(args, "set", None) or [])
    for flag, key in ABLATION_FLAGS.items():
        if getattr(args, flag, False):
            overrides[key] = False
    return overrides


def _config(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> RunConfig:
    overrides = _overrides(args)
    if extra:
        overrides.update(extra)
    return load_config(getattr(args, "config", None), overrides)


def _require_dir(path: Path, what: str) -> Path:
    if not Path(path).is_dir():
        raise ConfigurationError(f"{what} directory not found: {path}")
    return Path(path)


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise ConfigurationError(f"{what} not found: {path}")
    return Path(path)


def _with_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    overrides = _overrides(args)
    if not overrides:
        return config
    return parse_config_dict(config_to_dict(config), overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.clips < 0:
        raise ConfigurationError("--clips must be >= 0")
    seed = config.synth.seed if args.seed is None else args.seed
    write_dataset(config.synth, args.out, args.clips, seed)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    data_dir = _require_dir(args.data, "Data")
    eval_dir = _require_dir(args.eval_data, "Evaluation data") if args.eval_data else None
    config = _config(args)
    result = train(config, data_dir, args.out, eval_dir)
    print(f"steps={result.steps} checkpoint={result.checkpoint} log={result.log_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    data_dir = _require_dir(args.data, "Data")
    baseline = _require_file(args.baseline, "Baseline report") if args.baseline is not None else None
    if args.oracle:
        model: Optional[SSA2DNetwork] = None
        config = _config(args)
    else:
        if args.ckpt is None:
            raise ConfigurationError("eval needs --ckpt unless --oracle is given")
        model, config = load_checkpoint(_require_file(args.ckpt, "Checkpoint"))
        config = _with_overrides(config, args)
    report = evaluate_dataset(model, data_dir, config, oracle=args.oracle)
    if args.report is not None:
        report.write(args.report)
    print(summarize(report))
    if baseline is not None:
        print(_baseline_deltas(report, baseline))
    return EXIT_OK


def _baseline_deltas(report: MetricReport, path: Path) -> str:
    """Headline score changes against a report written by an earlier eval."""

    baseline = report_from_mapping(parse_report_lines(path.read_text(encoding="utf-8")))
    if not baseline:
        raise DataError(f"{path} holds no glo/ave/miou scores")
    parts = []
    for task, metrics in report.tasks.items():
        for name, previous in sorted(baseline.get(task, {}).items()):
            parts.append(f"{task}.{name}={getattr(metrics, name) - previous:+.4f}")
    return "delta " + " ".join(parts)


def cmd_infer(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(_require_file(args.ckpt, "Checkpoint"))
    clip = ClipRecord.from_tensors(read_container(_require_file(args.input, "Input clip"), CLIP_TENSORS))
    prediction = infer(model, clip.video)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_container(out_dir / "prediction.stc", prediction.to_tensors())
    if args.dump_frames:
        dump_frames({"actor": prediction.actor, "action": prediction.action, "mask": prediction.mask},
                    out_dir / "frames")
    print(f"prediction={out_dir / 'prediction.stc'}")
    return EXIT_OK


def _actor_counts(text: str) -> List[int]:
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--actors must be a comma-separated list of integers, got {text!r}") from exc
    if not counts or min(counts) < 0:
        raise ConfigurationError("--actors must list non-negative actor counts")
    return counts


def cmd_bench(args: argparse.Namespace) -> int:
    counts = _actor_counts(args.actors)
    if args.ckpt is not None:
        model, config = load_checkpoint(_require_file(args.ckpt, "Checkpoint"))
        config = _with_overrides(config, args)
    else:
        config = _config(args)
        model = SSA2DNetwork(config.network)
    report = benchmark(model, config.synth, counts, repeats=args.repeats)
    if args.report is not None:
        report.write(args.report)
    sys.stdout.write(report.to_lines())
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    data_dir = _require_dir(args.data, "Data")
    eval_dir = _require_dir(args.eval_data, "Evaluation data")
    out_dir = Path(args.out)
    rows = []
    for name, overrides in ABLATION_VARIANTS:
        config = _config(args, overrides)
        LOGGER.info("Ablation variant %s", name)
        result = train(config, data_dir, out_dir / name)
        report = evaluate_dataset(load_checkpoint(result.checkpoint)[0], eval_dir, config)
        row = {"variant": name, "steps": result.steps,
               "steps_to_half_loss": steps_to_threshold(result.entries, 0.5)}
        for task, metrics in report.tasks.items():
            row[f"{task}.glo"] = metrics.glo
            row[f"{task}.ave"] = metrics.ave
            row[f"{task}.miou"] = metrics.miou
        rows.append(row)
        LOGGER.info("%s: %s", name, summarize(report))

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [" ".join(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
                      for key, value in row.items()) for row in rows]
    (out_dir / "ablation.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "ablation.yaml").write_text(yaml.safe_dump(rows, sort_keys=False), encoding="utf-8")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a configuration key (repeatable), e.g. schedule.batch_size=4")


def _add_ablation_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--no-ap-infusion", dest="no_ap_infusion", action="store_true",
                        help="Drop the actor prior from the action branch")
    parser.add_argument("--no-ssa-masking", dest="no_ssa_masking", action="store_true",
                        help="Feed unmasked features to the action head")
    parser.add_argument("--no-atrous", dest="no_atrous", action="store_true", help="Disable atrous blocks")
    parser.add_argument("--no-multi-scale", dest="no_multi_scale", action="store_true",
                        help="Disable decoder pyramid fusion")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssa2d", description="Single-shot actor-action detection")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="Generate a synthetic dataset")
    _add_config_args(gen)
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--clips", type=int, required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(handler=cmd_gen_data)

    trn = commands.add_parser("train", help="Train a model")
    _add_config_args(trn)
    _add_ablation_args(trn)
    trn.add_argument("--data", type=Path, required=True)
    trn.add_argument("--out", type=Path, required=True)
    trn.add_argument("--eval-data", dest="eval_data", type=Path, default=None)
    trn.set_defaults(handler=cmd_train)

    evl = commands.add_parser("eval", help="Score a checkpoint on a dataset")
    _add_config_args(evl)
    evl.add_argument("--ckpt", type=Path, default=None)
    evl.add_argument("--data", type=Path, required=True)
    evl.add_argument("--report", type=Path, default=None)
    evl.add_argument("--oracle", action="store_true", help="Score ground truth against itself")
    evl.add_argument("--baseline", type=Path, default=None,
                     help="Earlier key=value report to print score deltas against")
    evl.set_defaults(handler=cmd_eval)

    inf = commands.add_parser("infer", help="Predict labels for one clip")
    inf.add_argument("--ckpt", type=Path, required=True)
    inf.add_argument("--input", type=Path, required=True)
    inf.add_argument("--out", type=Path, required=True)
    inf.add_argument("--dump-frames", dest="dump_frames", action="store_true")
    inf.set_defaults(handler=cmd_infer)

    bench = commands.add_parser("bench", help="Measure forward cost against actor count")
    _add_config_args(bench)
    _add_ablation_args(bench)
    source = bench.add_mutually_exclusive_group(required=True)
    source.add_argument("--ckpt", type=Path)
    source.add_argument("--init", action="store_true", help="Use a freshly initialised model")
    bench.add_argument("--actors", default="1,4,8")
    bench.add_argument("--repeats", type=int, default=20)
    bench.add_argument("--report", type=Path, default=None)
    bench.set_defaults(handler=cmd_bench)

    ablate = commands.add_parser("ablate", help="Train and score the full model and each single-toggle-off variant")
    _add_config_args(ablate)
    ablate.add_argument("--data", type=Path, required=True)
    ablate.add_argument("--eval-data", dest="eval_data", type=Path, required=True)
    ablate.add_argument("--out", type=Path, required=True)
    ablate.set_defaults(handler=cmd_ablate)

    return parser


def _dispatch(handler: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    try:
        return handler(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContainerFormatError, NonFiniteLossError, ShapeError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - unexpected failures
        LOGGER.exception("Command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def run_from_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="[%(asctime)s] %(levelname)s %(message)s",
    )
    return _dispatch(args.handler, args)
