import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import typing
from collections.abc import Sequence
from pathlib import Path

from tagprompt.bank import TextBank
from tagprompt.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from tagprompt.config import TrainConfig
from tagprompt.dataset import load_dataset, save_dataset
from tagprompt.errors import ConfigError, DatasetError, TagPromptError
from tagprompt.evaluation import EvalReport, evaluate_fewshot, evaluate_zeroshot
from tagprompt.gradcheck import gradient_check
from tagprompt.pipeline import pretrain
from tagprompt.synthetic import SyntheticSpec, generate_synthetic
from tagprompt.utils import canonical_json, sha256_json

logger = logging.getLogger(__name__)

PROG = "tagprompt"
OUT_DIR_ENV = "TSA_OUT_DIR"
RUN_MANIFEST_FILE = "run_manifest.json"
REPORT_FILE = "eval_report.json"
SWEEP_HEADER = ["way", "shot", "acc_mean", "acc_std", "f1_mean", "f1_std"]
SENSITIVITY_HEADER = ["top_k", "bank_capacity", *SWEEP_HEADER]


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Raises instead of printing usage and exiting, so errors stay one line."""

    def error(self, message: str) -> typing.NoReturn:
        raise UsageError(message)


@dataclasses.dataclass
class RunManifest:
    command: str
    config_path: str | None
    config: dict[str, typing.Any] | None
    output_dir: str
    input_hash: str

    def write(self) -> Path:
        out = Path(self.output_dir) / RUN_MANIFEST_FILE
        out.write_text(canonical_json(dataclasses.asdict(self)) + "\n", encoding="utf-8")
        return out


def content_hash(paths: Sequence[str | os.PathLike]) -> str:
    """sha256 over the bytes of every file under `paths`, in sorted path order."""
    h = hashlib.sha256()
    for root in paths:
        root = Path(root)
        files = sorted(p for p in root.rglob("*") if p.is_file()) if root.is_dir() else [root]
        for f in files:
            if f.name == RUN_MANIFEST_FILE:
                continue
            h.update(f.name.encode("utf-8"))
            h.update(f.read_bytes())
    return h.hexdigest()


def comma_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser() -> Parser:
    parser = Parser(prog=PROG, description="Graph-text pretraining with text semantics augmentation.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def outputs(p: argparse.ArgumentParser, flag: str = "--out") -> None:
        p.add_argument(flag, dest="out", help=f"output directory (default: under ${OUT_DIR_ENV})")
        p.add_argument("--force", action="store_true", help="reuse an existing output directory")

    def overrides(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON training config")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--batch-size", type=int)

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset")
    p.add_argument("--spec", help="JSON generator parameters")
    outputs(p)

    p = sub.add_parser("pretrain", help="pretrain and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--top-k", type=int)
    p.add_argument("--bank-capacity", type=int)
    overrides(p)
    outputs(p)

    p = sub.add_parser("eval-fewshot", help="prompt-tuned C-way K-shot evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=5)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--predictions", action="store_true", help="also dump per-node predictions")
    outputs(p)

    p = sub.add_parser("eval-zeroshot", help="zero-shot C-way evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prob-average", action="store_true")
    p.add_argument("--predictions", action="store_true", help="also dump per-node predictions")
    outputs(p)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--alpha", type=float)
    outputs(p)

    p = sub.add_parser("bank-stats", help="fill level and similarity histogram of a text bank")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bins", type=int, default=10)
    outputs(p)

    p = sub.add_parser("sweep", help="accuracy over way/shot (and top-k/bank capacity) grids")
    p.add_argument("--data", required=True)
    p.add_argument("--ways", type=comma_ints, default=[2, 3, 4, 5])
    p.add_argument("--shots", type=comma_ints, default=[1, 3, 5])
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument("--top-k", dest="top_ks", type=comma_ints)
    p.add_argument("--bank-capacity", dest="bank_capacities", type=comma_ints)
    overrides(p)
    outputs(p)
    return parser


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    values = {
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "lr": getattr(args, "lr", None),
        "alpha": getattr(args, "alpha", None),
        "batch_size": getattr(args, "batch_size", None),
        "top_k": getattr(args, "top_k", None),
        "bank_capacity": getattr(args, "bank_capacity", None),
    }
    overrides = {k: v for k, v in values.items() if v is not None}
    if args.config:
        return TrainConfig.from_json(args.config, **overrides)
    return TrainConfig.from_dict(overrides)


def prepare_output(
    args: argparse.Namespace,
    cfg: TrainConfig | None,
    inputs: Sequence[str | os.PathLike],
) -> Path:
    """Creates the run's output directory and writes its manifest before any work."""
    input_hash = sha256_json(
        {
            "command": args.command,
            "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "force", "verbose")},
            "config": cfg.to_dict() if cfg else None,
            "inputs": content_hash(inputs),
        }
    )
    root = Path(os.environ.get(OUT_DIR_ENV, "runs"))
    out = Path(args.out) if args.out else root / f"{args.command}-{input_hash[:12]}"
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; pass --force to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    RunManifest(
        command=args.command,
        config_path=getattr(args, "config", None),
        config=cfg.to_dict() if cfg else None,
        output_dir=str(out),
        input_hash=input_hash,
    ).write()
    return out


def _read_json_object(path: str) -> dict[str, typing.Any]:
    try:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"missing file: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e.msg})") from e
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return values


def synthetic_spec(values: typing.Mapping[str, typing.Any]) -> SyntheticSpec:
    """Builds generator parameters from JSON values. Unknown keys, mistyped values
    and out-of-range values all raise ConfigError."""
    hints = typing.get_type_hints(SyntheticSpec)
    types = {f.name: hints[f.name] for f in dataclasses.fields(SyntheticSpec)}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown generator key(s): {', '.join(unknown)}", unknown[0])
    clean = {}
    for key, value in values.items():
        expected = types[key]
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ConfigError(
                f"generator key {key} expects {expected.__name__}, got {type(value).__name__}",
                key,
            )
        clean[key] = value
    try:
        return SyntheticSpec(**clean)
    except DatasetError as e:
        raise ConfigError(f"invalid generator parameters: {e}") from e


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec = synthetic_spec(_read_json_object(args.spec) if args.spec else {})
    out = prepare_output(args, None, [args.spec] if args.spec else [])
    graph = generate_synthetic(spec)
    save_dataset(graph, out)
    print(json.dumps({"out": str(out), "nodes": graph.num_nodes, "edges": graph.num_edges}))
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = prepare_output(args, cfg, [args.data])
    graph = load_dataset(args.data)
    result = pretrain(graph, cfg, trace_path=out / "loss_trace.jsonl")
    save_checkpoint(result, out)
    manifest = read_manifest(out)
    print(json.dumps({"out": str(out), "steps": result.steps, "params_digest": manifest["params_digest"]}))
    return 0


def _write_report(report: EvalReport, out: Path) -> int:
    report.write(out / REPORT_FILE)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_eval_fewshot(args: argparse.Namespace) -> int:
    if args.shot < 1:
        raise UsageError(f"--shot {args.shot}: few-shot needs shot >= 1; use eval-zeroshot")
    checkpoint = load_checkpoint(args.ckpt)
    out = prepare_output(args, checkpoint.config, [args.ckpt, args.data])
    graph = load_dataset(args.data)
    report = evaluate_fewshot(
        checkpoint, graph, args.way, args.shot, args.runs, args.seed,
        predictions_path=out / "predictions.jsonl" if args.predictions else None,
    )  # fmt: skip
    return _write_report(report, out)


def cmd_eval_zeroshot(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    out = prepare_output(args, checkpoint.config, [args.ckpt, args.data])
    graph = load_dataset(args.data)
    report = evaluate_zeroshot(
        checkpoint, graph, args.way, args.runs, args.seed,
        use_probability_average=args.prob_average,
        predictions_path=out / "predictions.jsonl" if args.predictions else None,
    )  # fmt: skip
    return _write_report(report, out)


def cmd_grad_check(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = prepare_output(args, cfg, [args.config] if args.config else [])
    report = gradient_check(cfg)
    (out / "grad_check.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(json.dumps(report.to_dict()))
    if not report.passed:
        print(
            f"{PROG}: error: GradientCheckError: relative error >= {report.tolerance} "
            f"in {', '.join(report.failures)}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_bank_stats(args: argparse.Namespace) -> int:
    out = prepare_output(args, None, [args.ckpt])
    stats = TextBank.load(args.ckpt).stats(bins=args.bins)
    (out / "bank_stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(stats))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    base = resolve_config(args)
    out = prepare_output(args, base, [args.data])
    graph = load_dataset(args.data)
    sensitivity = bool(args.top_ks or args.bank_capacities)
    grid = [
        (k, capacity)
        for k in (args.top_ks or [base.top_k])
        for capacity in (args.bank_capacities or [base.bank_capacity])
    ]

    rows = []
    for k, capacity in grid:
        cfg = base.replace(top_k=k, bank_capacity=capacity)
        ckpt_dir = out / f"ckpt-k{k}-cap{capacity}"
        save_checkpoint(pretrain(graph, cfg), ckpt_dir)
        checkpoint = load_checkpoint(ckpt_dir, expected_config=cfg)
        for way in args.ways:
            for shot in args.shots:
                if shot == 0:
                    report = evaluate_zeroshot(checkpoint, graph, way, args.runs, args.eval_seed)
                else:
                    report = evaluate_fewshot(checkpoint, graph, way, shot, args.runs, args.eval_seed)
                row = [way, shot, report.acc_mean, report.acc_std, report.f1_mean, report.f1_std]
                rows.append([k, capacity, *row] if sensitivity else row)

    path = out / ("sensitivity.csv" if sensitivity else "sweep.csv")
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SENSITIVITY_HEADER if sensitivity else SWEEP_HEADER)
        writer.writerows(rows)
    print(json.dumps({"out": str(path), "rows": len(rows)}))
    return 0


COMMANDS: dict[str, typing.Callable[[argparse.Namespace], int]] = {
    "gen-synthetic": cmd_gen_synthetic,
    "pretrain": cmd_pretrain,
    "eval-fewshot": cmd_eval_fewshot,
    "eval-zeroshot": cmd_eval_zeroshot,
    "grad-check": cmd_grad_check,
    "bank-stats": cmd_bank_stats,
    "sweep": cmd_sweep,
}


def _fail(kind: str, message: str) -> None:
    line = " ".join(str(message).split())
    print(f"{PROG}: error: {kind}: {line}", file=sys.stderr)


def execute(argv: Sequence[str] | None = None) -> int:
    """Runs one subcommand; 0 on success, 1 on runtime errors, 2 on usage errors."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _fail("UsageError", str(e))
        return 2

    logging.basicConfig(
        level={0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        _fail("UsageError", str(e))
        return 2
    except ConfigError as e:
        _fail(type(e).__name__, str(e))
        return 2
    except TagPromptError as e:
        _fail(type(e).__name__, str(e))
        return 1
    except FileNotFoundError as e:
        _fail(DatasetError.__name__, f"missing file: {e.filename}")
        return 1
    except OSError as e:
        _fail(type(e).__name__, str(e))
        return 1


def main() -> None:
    sys.exit(execute())
