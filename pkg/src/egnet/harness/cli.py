"""Command-line harness.

Subcommands::

    egnet init    --out DIR                write a freshly initialised checkpoint
    egnet gen     --task T --out DIR       synthesise a dataset (dataset.json)
    egnet train   --out DIR                train, write model.json, metrics.csv, loss_curve.csv
    egnet eval    --ckpt F --out DIR       evaluate a checkpoint (eval.json)
    egnet audit   --ckpt F --out DIR       equivariance audit (audit.json)
    egnet compare --out DIR                equivariant model vs. plain GN baseline

Exit status: 0 on success, 1 on invalid input, 2 when the audit fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..errors import TrainingError, ValidationError
from ..rng import derive_seed
from .audit import audit
from .data import TASKS, SyntheticTask, gen_dataset, load_dataset, save_dataset
from .model import ModelConfig, build_model, check_compatible, load_model, save_model
from .train import OPTIMIZERS, TrainConfig, evaluate, train

log = logging.getLogger("egnet")

EXIT_OK, EXIT_INVALID, EXIT_AUDIT_FAILED = 0, 1, 2
HEAD_FOR_TASK = {"displacement_field": "displacement", "invariant_energy": "invariant"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _sub_seed(root: int, label: str) -> int:
    return int(derive_seed(root, label).generate_state(1)[0])


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=TASKS, default="displacement_field")
    p.add_argument("--n-nodes", type=int, default=5)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--attr-dim", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--aggregator", choices=("sum", "mean", "max"), default="sum")
    p.add_argument("--model", choices=("egn", "gn"), default="egn", help="gn = non-equivariant baseline")
    p.add_argument("--samples", type=int, default=256, help="training / generated sample count")
    p.add_argument("--eval-samples", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--data", type=Path, help="dataset.json from `gen` (training data)")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="stdout summary format")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="egnet", description="E(n)-equivariant graph network harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("init", "write a fresh checkpoint"),
        ("gen", "generate a synthetic dataset"),
        ("train", "train a model"),
        ("eval", "evaluate a checkpoint"),
        ("audit", "audit equivariance and gradients"),
        ("compare", "train the equivariant model and the baseline on growing data"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "audit":
            p.add_argument("--audit-samples", type=int, default=20)
        if name == "compare":
            p.add_argument("--sizes", default="16,64,256")
    return parser


def _task(args, seed_label: str, seed: Optional[int] = None) -> SyntheticTask:
    return SyntheticTask(
        args.task, args.n_nodes, args.dim, args.noise,
        _sub_seed(args.seed, seed_label) if seed is None else seed, args.attr_dim,
    )


def _model_config(args, kind: Optional[str] = None) -> ModelConfig:
    agg = args.aggregator
    return ModelConfig(
        head=HEAD_FOR_TASK[args.task], dim=args.dim, layers=args.layers, hidden=args.hidden,
        attr_dim=args.attr_dim, aggregators=(agg,) * 4, kind=kind or args.model,
    )


def _model(args, kind: Optional[str] = None):
    if args.ckpt is not None:
        return load_model(args.ckpt)
    return build_model(_model_config(args, kind), seed=derive_seed(args.seed, "init"))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _emit(summary: dict, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(summary, sort_keys=True))
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(summary))
    w.writerow(list(summary.values()))
    sys.stdout.write(buf.getvalue())


def _training_data(args) -> tuple:
    """``(task, samples)``; with ``--data`` the file's task overrides the task flags."""
    if args.data is not None:
        task, samples = load_dataset(args.data)
        args.task, args.n_nodes, args.dim = task.kind, task.n_nodes, task.dim
        args.noise, args.attr_dim = task.noise, task.attr_dim
        return task, samples
    task = _task(args, "data")
    return task, gen_dataset(task, args.samples)


def _check_data(model, samples) -> None:
    for s in samples[:1]:
        check_compatible(model, s.graph)


def cmd_init(args) -> int:
    model = _model(args)
    save_model(model, args.out / "model.json")
    _emit({"checkpoint": str(args.out / "model.json")}, args.format)
    return EXIT_OK


def cmd_gen(args) -> int:
    task = _task(args, "data")
    samples = gen_dataset(task, args.samples)
    path = args.out / "dataset.json"
    save_dataset(path, task, samples)
    _emit({"dataset": str(path), "samples": len(samples), "task": task.kind}, args.format)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch, optimizer=args.optimizer, seed=args.seed)
    _, data = _training_data(args)
    model = _model(args)
    eval_data = gen_dataset(_task(args, "eval"), args.eval_samples) if args.eval_samples > 0 else None
    _check_data(model, data)
    model, hist = train(model, data, cfg, eval_data)

    save_model(model, args.out / "model.json")
    evals = hist.eval_loss if eval_data else [""] * len(hist.train_loss)
    rows = [(0, hist.initial_train_loss, "" if hist.initial_eval_loss is None else hist.initial_eval_loss)]
    rows += [(k + 1, tl, el) for k, (tl, el) in enumerate(zip(hist.train_loss, evals))]
    _write_csv(args.out / "metrics.csv", ("epoch", "train_loss", "eval_loss"), rows)
    _write_csv(args.out / "loss_curve.csv", ("step", "batch_loss"), enumerate(hist.step_loss, 1))
    summary = {"epochs": cfg.epochs, "initial_train_loss": hist.initial_train_loss, "final_train_loss": hist.final_train_loss}
    if eval_data:
        summary.update(initial_eval_loss=hist.initial_eval_loss, final_eval_loss=hist.eval_loss[-1])
    _emit(summary, args.format)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.ckpt is None:
        raise ValidationError("eval needs --ckpt")
    model = load_model(args.ckpt)
    if args.data is not None:
        _, samples = load_dataset(args.data)
    else:
        samples = gen_dataset(_task(args, "eval"), args.eval_samples)
    _check_data(model, samples)
    result = {"eval_loss": evaluate(model, samples), "samples": len(samples)}
    (args.out / "eval.json").write_text(json.dumps(result, sort_keys=True) + "\n", encoding="utf-8")
    _emit(result, args.format)
    return EXIT_OK


def cmd_audit(args) -> int:
    model = _model(args)
    report = audit(model, args.audit_samples, seed=args.seed)
    (args.out / "audit.json").write_text(report.to_json(), encoding="utf-8")
    for line in report.summary_lines():
        log.info(line)
    _emit({"pass": report.passed, "report": str(args.out / "audit.json")}, args.format)
    return EXIT_OK if report.passed else EXIT_AUDIT_FAILED


def cmd_compare(args) -> int:
    """Eval loss of both model families as the training set grows (no pass/fail)."""
    sizes = sorted({int(s) for s in args.sizes.split(",") if s.strip()})
    if not sizes or sizes[0] < 1:
        raise ValidationError("--sizes must list positive integers")
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch, optimizer=args.optimizer, seed=args.seed)
    pool = gen_dataset(_task(args, "data"), sizes[-1])
    eval_data = gen_dataset(_task(args, "eval"), max(args.eval_samples, 1))
    rows = []
    for kind in ("egn", "gn"):
        for n in sizes:
            model = build_model(_model_config(args, kind), seed=derive_seed(args.seed, "init"))
            model, _ = train(model, pool[:n], cfg)
            rows.append((kind, n, evaluate(model, eval_data)))
            log.info("%s n=%d eval %.6g", kind, n, rows[-1][2])
    _write_csv(args.out / "compare.csv", ("model", "train_size", "eval_loss"), rows)
    _emit({"report": str(args.out / "compare.csv"), "runs": len(rows)}, args.format)
    return EXIT_OK


COMMANDS = {
    "init": cmd_init, "gen": cmd_gen, "train": cmd_train,
    "eval": cmd_eval, "audit": cmd_audit, "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except (ValidationError, TrainingError, IndexError) as exc:
        print(f"egnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
