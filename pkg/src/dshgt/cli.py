"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Errors go to standard error prefixed with ``E:``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint
from .errors import DataError, DshgtError, NumericalError
from .frontend import export_cpg, parse_directory, read_cpg, write_cpg
from .frontend.cpgjson import dumps
from .method_cpg import slice_methods, symbolize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D401 - argparse hook
        raise UsageError(f"{self.prog}: {message}")


def _json_out(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def cmd_build_cpg(args) -> int:
    g = parse_directory(args.dir)
    write_cpg(g, args.out)
    print(f"{len(g.nodes)} nodes, {len(g.edges)} edges -> {args.out}")
    return EXIT_OK


def cmd_slice(args) -> int:
    g = read_cpg(args.graph)
    out = Path(args.out)
    docs = []
    for m in slice_methods(g):
        sym, _ = symbolize(m)
        sym.graph.annotations = {m.method_node: list(m.annotation)} if m.annotation else {}
        docs.append((f"method-{m.method_node:06d}.json", dumps(export_cpg(sym.graph))))
    out.mkdir(parents=True, exist_ok=True)
    for name, text in docs:
        (out / name).write_text(text, encoding="utf-8")
    print(f"{len(docs)} method slices -> {out}")
    return EXIT_OK


def _load_config(args):
    from .train_eval import TrainConfig

    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: invalid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
    for key in ("epochs", "lam", "seed", "lr", "batch"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def cmd_train(args) -> int:
    from .train_eval import Detector, evaluate, ingest, stratified_split, train

    config = _load_config(args)
    samples = ingest(args.manifest)
    train_set, test_set = stratified_split(samples, config.split_ratio, config.seed)
    det = Detector.create(config, train_set)
    trace = train(det, train_set)
    checkpoint.save(det, args.out)
    report = {
        "checkpoint": str(args.out),
        "train_samples": len(train_set),
        "test_samples": len(test_set),
        "loss_trace": trace,
        "test": evaluate(det, test_set).metrics.to_dict(),
    }
    print(_json_out(report))
    return EXIT_OK


def _subset(det, samples, which: str):
    from .train_eval import stratified_split

    if which == "all":
        return samples
    train_set, test_set = stratified_split(samples, det.config.split_ratio, det.config.seed)
    return train_set if which == "train" else test_set


def cmd_eval(args) -> int:
    from .train_eval import evaluate, ingest

    det = checkpoint.load(args.ckpt)
    samples = _subset(det, ingest(args.manifest), args.split)
    ev = evaluate(det, samples)
    text = _json_out(ev.metrics.to_dict())
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .train_eval import predict_methods

    det = checkpoint.load(args.ckpt)
    src = Path(args.source)
    g = read_cpg(src) if src.suffix == ".json" else parse_directory(src)
    results = predict_methods(det, g)
    print("\n".join(json.dumps(r, sort_keys=True) for r in results))
    return EXIT_OK


def cmd_transfer(args) -> int:
    from .train_eval import evaluate, ingest, transfer_finetune

    det = checkpoint.load(args.ckpt)
    samples = ingest(args.manifest)
    new, trace = transfer_finetune(det, samples, reinit_head=args.reinit_head)
    checkpoint.save(new, args.out)
    print(_json_out({"checkpoint": str(args.out), "loss_trace": trace,
                     "train": evaluate(new, samples).metrics.to_dict()}))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .diagnostics import full_model_grad_check

    report = full_model_grad_check(seed=args.seed, tol=args.tol)
    print(report.summary())
    if not report.passed:
        raise NumericalError(f"gradient check failed: max relative error {report.max_rel_error:.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import write_corpus

    manifest = write_corpus(args.pattern, args.n, args.seed, args.out, args.language)
    print(f"{args.n} samples -> {manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dshgt", description="Method-level CPG vulnerability detector.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-cpg", help="parse a mini-C source directory into a CPG document")
    s.add_argument("dir", help="source directory (or a single file)")
    s.add_argument("--out", required=True, help="output CPG JSON path")
    s.set_defaults(func=cmd_build_cpg)

    s = sub.add_parser("slice", help="write one symbolized method-level CPG per METHOD")
    s.add_argument("graph", help="CPG JSON document")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("train", help="train on a manifest and write a checkpoint")
    s.add_argument("--manifest", required=True, help="JSONL dataset manifest")
    s.add_argument("--config", help="JSON file with training configuration")
    s.add_argument("--out", required=True, help="checkpoint output path")
    s.add_argument("--epochs", type=int, help="override config epochs")
    s.add_argument("--lam", type=float, help="override config loss weight")
    s.add_argument("--seed", type=int, help="override config seed")
    s.add_argument("--lr", type=float, help="override config learning rate")
    s.add_argument("--batch", type=int, help="override config batch size")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    s.add_argument("--ckpt", required=True, help="checkpoint path")
    s.add_argument("--manifest", required=True, help="JSONL dataset manifest")
    s.add_argument("--split", choices=("all", "train", "test"), default="all",
                   help="evaluate every record or one side of the checkpoint's split")
    s.add_argument("--out", help="also write the metrics JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="score every method of a source file or CPG document")
    s.add_argument("--ckpt", required=True, help="checkpoint path")
    s.add_argument("--source", required=True, help="mini-C file/directory or CPG JSON")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("transfer", help="fine-tune the readout and classifier on new samples")
    s.add_argument("--ckpt", required=True, help="source checkpoint")
    s.add_argument("--manifest", required=True, help="JSONL manifest of the new corpus")
    s.add_argument("--out", required=True, help="output checkpoint")
    s.add_argument("--reinit-head", action="store_true",
                   help="start from a fresh head (no-transfer baseline)")
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("grad-check", help="verify autodiff on the full model against finite differences")
    s.add_argument("--seed", type=int, default=0, help="random seed for graph and parameters")
    s.add_argument("--tol", type=float, default=1e-3, help="relative error tolerance")
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("synth", help="generate a labeled mini-C corpus with a planted pattern")
    s.add_argument("--pattern", required=True, choices=("cwe369", "cwe834", "cwe676"))
    s.add_argument("--n", type=int, required=True, help="number of samples")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--language", choices=("c", "b"), default="c",
                   help="c: mini-C files; b: Java-like CPG documents")
    s.set_defaults(func=cmd_synth)
    return p


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"E: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"E: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"E: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DshgtError, OSError) as exc:
        print(f"E: data: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
