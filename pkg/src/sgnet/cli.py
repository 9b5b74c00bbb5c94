"""``sgn`` command line: train, eval, embed, graph, verify.

Exit codes: 0 success, 2 bad flags or model/data mismatch, 3 data errors,
4 numeric failure. Diagnostics go to stderr; results to stdout as JSON.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .attention import MhaConfig
from .data import load_image_file, load_split
from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import SgnConfig, SgnModel
from .ppm import render_graph, write_ppm
from .serialize import load_model, save_model
from .sggraph import aggregate_channels, build_signature_graph, dump_graph, parse_aggregate
from .train import TrainConfig, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    """Flag combination rejected after parsing (maps to exit 2)."""


def _int_list(text: str) -> tuple:
    text = text.strip().lower()
    if text in ("", "none"):
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _add_graph_flags(p):
    p.add_argument("--patch", type=int, default=6, help="patch size in input pixels (default 6)")
    p.add_argument("--mode", choices=["horizontal", "vertical"], default="horizontal")
    p.add_argument("--extremum", choices=["max", "min"], default="max")
    p.add_argument("--link-chains", action="store_true", help="join row/column chains into one path")
    p.add_argument("--aggregate", default="mean", help="channel reduction: mean, max or channel:K")


def _add_model_flags(p):
    _add_graph_flags(p)
    p.add_argument("--sg-layers", type=_int_list, default=(1,),
                   help="comma-separated blocks to tap, or 'none' for a plain CNN (default 1)")
    p.add_argument("--skip", action="store_true", help="also concatenate the unscaled node attributes")
    p.add_argument("--mha", action="store_true", help="add the attention head over the first tap")
    p.add_argument("--mha-heads", type=_positive, default=2)
    p.add_argument("--mha-key-dim", type=_positive, default=16)
    p.add_argument("--mha-value-dim", type=_positive, default=16)
    p.add_argument("--channels", type=_int_list, default=(16, 32, 64), help="conv block widths")
    p.add_argument("--kernel", type=_positive, default=3)
    p.add_argument("--pool", type=_positive, default=2)
    p.add_argument("--eig-offset", type=float, default=0.0, help="added to every eigenvalue before scaling")
    p.add_argument("--classes", type=_positive, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgn", description="Signature-graph network toolkit.")
    parser.add_argument("--seed", type=int, default=0, help="single source of all randomness")
    sub = parser.add_subparsers(dest="command", required=True)
    data_default = os.environ.get("SGN_DATA_DIR")

    # --seed is accepted before or after the command name
    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument("--seed", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("train", parents=[seed], help="train a model and write it to --out")
    _add_model_flags(p)
    p.add_argument("--data", default=data_default, help="dataset root (default $SGN_DATA_DIR)")
    p.add_argument("--out", default="model.sgn", help="model file to write")
    p.add_argument("--metrics", help="write JSON-lines metrics here instead of stdout")
    p.add_argument("--epochs", type=_nonneg, default=3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--lr-step", type=_positive, default=2, help="epochs between learning-rate decays")
    p.add_argument("--lr-gamma", type=float, default=0.3)
    p.add_argument("--threads", type=_positive, default=1, help="deterministic data-parallel shards")
    p.add_argument("--limit-train", type=_nonneg)
    p.add_argument("--limit-test", type=_nonneg)
    p.add_argument("--no-timing", action="store_true", help="report seconds as null (byte-stable metrics)")
    p.add_argument("--human", action="store_true", help="pretty-print metrics")

    p = sub.add_parser("eval", parents=[seed], help="test accuracy of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=data_default)
    p.add_argument("--limit-test", type=_nonneg)
    p.add_argument("--classes", type=_positive, help="expected class count; must match the model")
    p.add_argument("--human", action="store_true")

    p = sub.add_parser("embed", parents=[seed], help="print the classifier input vector for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="IDX3 file or SGT1 tensor")
    p.add_argument("--index", type=_nonneg, default=0)

    p = sub.add_parser("graph", parents=[seed], help="dump (and optionally render) a signature graph")
    _add_graph_flags(p)
    p.add_argument("--image", required=True, help="IDX3 file or SGT1 tensor")
    p.add_argument("--index", type=_nonneg, default=0)
    p.add_argument("--layer", type=_nonneg, default=0, help="0 = the image itself, k = block k activation")
    p.add_argument("--model", help="model supplying block activations (needed for --layer > 0)")
    p.add_argument("--out", help="write the dump here instead of stdout")
    p.add_argument("--ppm", help="also write a P6 rendering")
    p.add_argument("--scale", type=_positive, default=8, help="PPM pixels per map cell")

    p = sub.add_parser("verify", parents=[seed], help="run the invariant and oracle property suite")
    p.add_argument("--force-fail", action="append", default=[], metavar="PROPERTY",
                   help="report PROPERTY as failed (exercises the failure path)")
    p.add_argument("--only", action="append", metavar="PROPERTY")
    return parser


# -- helpers ---------------------------------------------------------------

def _atomic_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _writable(path, flag: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"{flag}: directory {parent} does not exist")


def _need_data(args):
    if not args.data:
        raise UsageError("--data not given and SGN_DATA_DIR is unset")
    return args.data


def model_config_from_args(args) -> SgnConfig:
    mha = MhaConfig(args.mha_heads, args.mha_key_dim, args.mha_value_dim) if args.mha else None
    if not args.channels:
        raise ConfigError("--channels must list at least one block width")
    return SgnConfig(
        blocks=tuple((c, args.kernel, args.pool) for c in args.channels),
        sg_layers=args.sg_layers,
        patch_size=args.patch,
        extremum=args.extremum,
        mode=args.mode,
        skip_connection=args.skip,
        link_chains=args.link_chains,
        eig_offset=args.eig_offset,
        aggregate=args.aggregate,
        mha=mha,
        class_count=args.classes,
        seed=args.seed,
    )


def _human_metrics(rec: dict) -> str:
    acc = "n/a" if rec["test_acc"] is None else f"{100 * rec['test_acc']:.2f}%"
    secs = "" if rec["seconds"] is None else f"  {rec['seconds']:.1f}s"
    return f"epoch {rec['epoch']:>3}  loss {rec['train_loss']:.4f}  test acc {acc}{secs}"


# -- commands --------------------------------------------------------------

def cmd_train(args, out) -> int:
    # every flag is validated before data is read or anything is written
    config = model_config_from_args(args)
    tcfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, momentum=args.momentum,
        weight_decay=args.weight_decay, lr_step=args.lr_step, lr_gamma=args.lr_gamma,
        seed=args.seed, threads=args.threads, timing=not args.no_timing,
    )
    model = SgnModel(config)
    _writable(args.out, "--out")
    if args.metrics:
        _writable(args.metrics, "--metrics")
    root = _need_data(args)
    train = load_split(root, "train", args.limit_train, config.class_count)
    test = load_split(root, "test", args.limit_test, config.class_count)
    if train.image_shape != config.input_shape:
        model = SgnModel(replace(config, input_shape=train.image_shape))
    if len(train) < 2:
        raise DataError("training needs at least two images")

    lines = []
    for rec in train_loop(model, train, test, tcfg):
        line = json.dumps(rec)
        lines.append(line)
        if not args.metrics:
            out.write((_human_metrics(rec) if args.human else line) + "\n")
            out.flush()
    save_model(model, args.out)
    if args.metrics:
        _atomic_text(args.metrics, "".join(ln + "\n" for ln in lines))
    return EXIT_OK


def cmd_eval(args, out) -> int:
    model = load_model(args.model)
    if args.classes is not None and args.classes != model.config.class_count:
        raise UsageError(f"--classes {args.classes} but the model has {model.config.class_count} classes")
    test = load_split(_need_data(args), "test", args.limit_test, class_count=256)
    if test.image_shape != model.config.input_shape:
        raise UsageError(f"data images {test.image_shape} do not match model input {model.config.input_shape}")
    if len(test) and int(test.labels.max()) >= model.config.class_count:
        raise UsageError(f"data has label {int(test.labels.max())} but the model has "
                         f"{model.config.class_count} classes")
    acc = model.accuracy(test)
    if args.human:
        out.write(f"test accuracy {100 * acc:.2f}% on {len(test)} images\n")
    else:
        out.write(json.dumps({"test_acc": acc, "n": len(test)}) + "\n")
    return EXIT_OK


def cmd_embed(args, out) -> int:
    model = load_model(args.model)
    image = load_image_file(args.image, args.index)
    if image.shape != model.config.input_shape:
        raise UsageError(f"image {image.shape} does not match model input {model.config.input_shape}")
    vec = model.embed(image[None])[0]
    if vec.shape != (model.classifier_input_width,):
        raise ShapeError(f"embedding width {vec.shape} != declared {model.classifier_input_width}")
    out.write(json.dumps([float(v) for v in vec]) + "\n")
    return EXIT_OK


def cmd_graph(args, out) -> int:
    how = parse_aggregate(args.aggregate)
    if args.layer > 0 and not args.model:
        raise UsageError("--layer > 0 needs --model")
    for flag, path in (("--out", args.out), ("--ppm", args.ppm)):
        if path:
            _writable(path, flag)
    image = load_image_file(args.image, args.index)
    if args.layer == 0:
        fmap = image
    else:
        model = load_model(args.model)
        if args.layer > len(model.blocks):
            raise UsageError(f"--layer {args.layer} but the model has {len(model.blocks)} blocks")
        if image.shape != model.config.input_shape:
            raise UsageError(f"image {image.shape} does not match model input {model.config.input_shape}")
        fmap = model.block_activations(image[None])[args.layer - 1][0]
    map2d = aggregate_channels(fmap, how)
    graph = build_signature_graph(map2d, args.patch, args.extremum, args.mode, link_chains=args.link_chains)
    text = dump_graph(graph)
    if args.out:
        _atomic_text(args.out, text)
    else:
        out.write(text)
    if args.ppm:
        write_ppm(args.ppm, render_graph(map2d, graph, args.scale))
    return EXIT_OK


def cmd_verify(args, out) -> int:
    from .verify import PROPERTIES, run_properties

    unknown = [n for n in list(args.force_fail) + list(args.only or []) if n not in PROPERTIES]
    if unknown:
        raise UsageError(f"unknown properties {unknown}; known: {sorted(PROPERTIES)}")
    ok = run_properties(args.seed, set(args.force_fail), set(args.only) if args.only else None, out)
    return EXIT_OK if ok else 1


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "embed": cmd_embed, "graph": cmd_graph, "verify": cmd_verify}


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: --help is 0, bad flags are 2
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except (UsageError, ConfigError, ShapeError) as exc:
        print(f"sgn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"sgn {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"sgn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def run(argv) -> tuple[int, str]:
    """Run a command in-process and capture stdout."""
    buf = io.StringIO()
    code = main(argv, buf)
    return code, buf.getvalue()


if __name__ == "__main__":
    sys.exit(main())
