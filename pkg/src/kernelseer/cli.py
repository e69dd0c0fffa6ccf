"""``kernelseer`` command line: gen-synthetic, train, eval, predict, baselines.

Exit codes: 0 success, 1 usage, 2 data or validation problem, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import BASELINES
from .constraints import ConstraintPredicate, KernelSpec, builtin_specs, get_spec, membership_predicate, search_space_size
from .data import (
    DIFFICULTIES,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    split,
    write_dataset,
)
from .decoding import beam_search, constrained_beam_search
from .encoding import INPUT_FIELDS, PRECISIONS, ProblemDescriptor, build_vocab, decode_params, encode_problem
from .errors import (
    CheckpointError,
    IncompatibleError,
    KernelSeerError,
    OutOfVocabularyError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .metrics import EvalReport, format_csv, format_table, greedy_report, topk_metrics
from .models import VARIANTS, ModelConfig, build_model, init_params
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

_DATA_ERRORS = (ValidationError, ParseError, SchemaError, CheckpointError, IncompatibleError, OutOfVocabularyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _widths(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"beam widths must be integers, got '{text}'") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("beam widths must be positive integers")
    return ks


def _conv_layers(text: str) -> tuple[tuple[int, int, int], ...]:
    """``64x3x1;32x3x1`` -> ((64, 3, 1), (32, 3, 1))."""
    try:
        layers = tuple(tuple(int(v) for v in layer.split("x")) for layer in text.split(";") if layer)
    except ValueError:
        raise argparse.ArgumentTypeError(f"conv layers look like 64x3x1;32x3x1, got '{text}'") from None
    if not layers or any(len(layer) != 3 for layer in layers):
        raise argparse.ArgumentTypeError(f"conv layers look like 64x3x1;32x3x1, got '{text}'")
    return layers


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("KERNELSEER_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"KERNELSEER_THREADS must be a positive integer, got '{env}'") from None
        if value < 1:
            raise UsageError(f"KERNELSEER_THREADS must be a positive integer, got '{env}'")
        return value
    return os.cpu_count() or 1


def _readable(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"cannot read '{path}'")
    return p


def _writable(path: str) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"output directory '{parent}' does not exist")
    return p


def _parse_descriptor(text: str) -> dict[str, int]:
    values = {}
    for piece in text.split(","):
        if not piece.strip():
            continue
        if "=" not in piece:
            raise UsageError(f"descriptor entries look like n=32, got '{piece.strip()}'")
        key, val = (s.strip() for s in piece.split("=", 1))
        try:
            values[key] = int(val)
        except ValueError:
            raise UsageError(f"descriptor field {key} needs an integer, got '{val}'") from None
    missing = [f for f in INPUT_FIELDS if f not in values]
    if missing:
        raise UsageError(f"descriptor is missing field(s): {', '.join(missing)}")
    return values


def _upper_bounds(items: list[str]) -> list[ConstraintPredicate]:
    """``--max name=value`` flags become monotone ``name <= value`` predicates."""
    preds = []
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--max takes name=value, got '{item}'")
        name, val = (s.strip() for s in item.split("=", 1))
        try:
            limit = int(val)
        except ValueError:
            raise UsageError(f"--max {name} needs an integer bound, got '{val}'") from None
        preds.append(
            ConstraintPredicate(
                name=f"{name}<={limit}",
                fn=lambda _d, p, name=name, limit=limit: p.get(name, limit) <= limit,
                reads=(name,),
            )
        )
    return preds


def _model_spec(params) -> KernelSpec:
    """The spec a checkpoint was trained for: builtin when known, else rebuilt from its vocabulary."""
    specs = builtin_specs()
    out_vals = tuple(params.vocab.output_values.items())
    spec = specs.get(params.kernel)
    if spec is not None and spec.params == out_vals:
        return spec
    bare = KernelSpec(params.kernel or "custom", out_vals)
    return KernelSpec(bare.name, out_vals, (membership_predicate(bare),))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synthetic(args) -> int:
    out = _writable(args.out)
    spec = get_spec(args.kernel)
    ds = generate_synthetic(spec, args.samples, args.seed, args.difficulty, args.precision)
    write_dataset(ds, out)
    print(f"wrote {len(ds)} samples to {out}")
    print(f"search_space_size {spec.name}: {search_space_size(spec)}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = _readable(args.data)
    out = _writable(args.out)
    log_path = _writable(args.log) if args.log else None
    test_out = _writable(args.test_out) if args.test_out else None
    ds, spec = load_dataset(data, args.kernel, args.precision)
    if ds.kernel != args.kernel:
        raise IncompatibleError(f"{data} holds {ds.kernel} records, not {args.kernel}")
    vocab = build_vocab(spec, ds)
    train_ds, test_ds = split(ds, args.test_fraction, args.seed)
    x_tr, y_tr = train_ds.encode(spec, vocab)
    x_te, y_te = test_ds.encode(spec, vocab)

    overrides = {
        k: getattr(args, k)
        for k in ("encoder_size", "pre_attention_size", "post_attention_size", "decoder_size", "dropout",
                  "recurrent_dropout", "conv_layers")
        if getattr(args, k) is not None
    }
    config = ModelConfig(variant=args.variant, **overrides)
    params = init_params(config, vocab.input_sizes, vocab.output_sizes, seed=args.seed)
    params.kernel, params.precision, params.vocab = spec.name, ds.precision, vocab

    rows = []

    def on_epoch(entry):
        rows.append(entry)
        print(
            f"epoch {entry.epoch:3d}  train_loss {entry.train_loss:.4f}  train_acc {entry.train_avg_acc:6.2f}"
            f"  test_loss {entry.test_loss:.4f}  test_acc {entry.test_avg_acc:6.2f}",
            flush=True,
        )

    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed, lr=args.lr)
    trained, _ = train(params, x_tr, y_tr, tc, x_te, y_te, on_epoch)
    save_checkpoint(trained, out)
    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("epoch", "train_loss", "train_avg_acc", "test_loss", "test_avg_acc"))
            for r in rows:
                writer.writerow(
                    (r.epoch, f"{r.train_loss:.6f}", f"{r.train_avg_acc:.4f}", f"{r.test_loss:.6f}", f"{r.test_avg_acc:.4f}")
                )
    if test_out is not None:
        write_dataset(test_ds, test_out)
    print(f"saved checkpoint to {out} ({trained.num_weights()} weights)")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(_readable(args.model))
    ds, spec = load_dataset(_readable(args.data), params.kernel, params.precision)
    if spec.params != tuple(params.vocab.output_values.items()):
        raise IncompatibleError(f"checkpoint for {params.kernel} does not match the parameter sets of {spec.name} in {args.data}")
    threads = _threads(args)
    x, y = ds.encode(spec, params.vocab, snap=args.nearest)
    descriptors = [s.descriptor for s in ds.samples]
    model = build_model(params)
    constrained = args.constraints == "on"
    preds = list(spec.predicates) + _upper_bounds(args.max) if constrained else None
    label = "beam+constraints" if constrained else "beam"
    reports = {label: topk_metrics(model, x, y, args.beam, preds, spec, params.vocab, descriptors, threads)}
    greedy = greedy_report(model, x, y)
    print(f"{spec.name} {params.precision} {params.config.variant}: {len(ds)} samples")
    print(format_table(reports))
    for k, r in sorted(reports[label].items()):
        print(f"k={k}: invalid outputs {r.invalid}")
    print(f"greedy: Avg {greedy.average:.2f}  Pft {greedy.perfect:.2f}")
    if args.csv:
        csv_path = _writable(args.csv)
        text = format_csv({**reports, "greedy": {1: greedy}})
        csv_path.write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    params = load_checkpoint(_readable(args.model))
    spec = _model_spec(params)
    descriptor = ProblemDescriptor.from_mapping(_parse_descriptor(args.descriptor), params.precision or "fp32")
    tokens = encode_problem(descriptor, params.vocab, snap=args.nearest)
    model = build_model(params)
    if args.constraints == "on":
        preds = list(spec.predicates) + _upper_bounds(args.max)
        beams = constrained_beam_search(model, tokens, args.beam, preds, spec, params.vocab, descriptor)
        if not beams:
            print(f"no parameter set satisfies the constraints: {beams.diagnostic}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        beams = beam_search(model, tokens, args.beam)
    for rank, hyp in enumerate(beams, start=1):
        values = decode_params(hyp.tokens, spec, params.vocab)
        text = ",".join(f"{k}={v}" for k, v in values.items())
        print(f"{rank}\t{hyp.log_prob:.6f}\t{text}")
    return EXIT_OK


def cmd_baselines(args) -> int:
    data = _readable(args.data)
    ds, spec = load_dataset(data, args.kernel, args.precision)
    train_ds, test_ds = split(ds, args.test_fraction, args.seed)
    feats = lambda d: np.array([s.descriptor.as_tuple() for s in d], dtype=float)
    labels = lambda d: np.array([[s.params[n] for n in spec.param_names] for s in d])
    x_tr, y_tr, x_te, y_te = feats(train_ds), labels(train_ds), feats(test_ds), labels(test_ds)
    chosen = args.models.split(",") if args.models else list(BASELINES)
    for name in chosen:
        if name not in BASELINES:
            raise UsageError(f"unknown baseline '{name}'; choose from {', '.join(BASELINES)}")
    print(f"{'model':<8} {'Avg':>8} {'Pft':>8}")
    for name in chosen:
        model = BASELINES[name]() if name != "knn" else BASELINES[name](args.neighbors)
        pred = model.fit(x_tr, y_tr).predict(x_te)
        r = EvalReport.from_predictions(pred, y_te)
        print(f"{name:<8} {r.average:8.2f} {r.perfect:8.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kernelseer", description="Predict GPU kernel tuning parameters from convolution descriptors.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", help="write a synthetic record file")
    g.add_argument("--kernel", required=True)
    g.add_argument("--samples", type=_positive, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--difficulty", choices=DIFFICULTIES, default="moderate")
    g.add_argument("--precision", choices=PRECISIONS, default="fp32")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--kernel", required=True)
    t.add_argument("--precision", choices=PRECISIONS, default="fp32")
    t.add_argument("--variant", choices=VARIANTS, default="hybrid-2")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=_positive, default=100)
    t.add_argument("--batch", type=_positive, default=64)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--test-fraction", type=float, default=0.2)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="per-epoch CSV log")
    t.add_argument("--test-out", help="write the held-out records here")
    t.add_argument("--encoder-size", type=_positive)
    t.add_argument("--pre-attention-size", type=_positive)
    t.add_argument("--post-attention-size", type=_positive)
    t.add_argument("--decoder-size", type=_positive)
    t.add_argument("--conv-layers", type=_conv_layers, help="e.g. 64x3x1;32x3x1 (filters x width x stride)")
    t.add_argument("--dropout", type=float)
    t.add_argument("--recurrent-dropout", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-k metrics of a checkpoint on a record file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--beam", type=_widths, default=[1])
    e.add_argument("--constraints", choices=("on", "off"), default="off")
    e.add_argument("--max", action="append", metavar="NAME=VALUE", help="extra upper bound (repeatable)")
    e.add_argument("--nearest", action="store_true", help="snap unseen descriptor values to the nearest known one")
    e.add_argument("--csv", help="also write the report as CSV")
    e.add_argument("--threads", type=_positive)
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="ranked parameter sets for one descriptor")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptor", required=True, help='"n=..,c=..,h=..,w=..,k=..,y=..,x=.."')
    p.add_argument("--beam", type=_positive, default=1)
    p.add_argument("--constraints", choices=("on", "off"), default="off")
    p.add_argument("--max", action="append", metavar="NAME=VALUE", help="extra upper bound (repeatable)")
    p.add_argument("--nearest", action="store_true", help="snap unseen descriptor values to the nearest known one")
    p.set_defaults(func=cmd_predict)

    b = sub.add_parser("baselines", help="kNN, decision tree and naive Bayes on the same split")
    b.add_argument("--data", required=True)
    b.add_argument("--kernel")
    b.add_argument("--precision", choices=PRECISIONS)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--test-fraction", type=float, default=0.2)
    b.add_argument("--models", help=f"comma list from {','.join(BASELINES)}")
    b.add_argument("--neighbors", type=_positive, default=1)
    b.set_defaults(func=cmd_baselines)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kernelseer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"kernelseer: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KernelSeerError as exc:
        print(f"kernelseer: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
