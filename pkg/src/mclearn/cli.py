"""Command-line entry point.

Subcommands cover the full pipeline: ``init`` (data-driven operator
initialization + classifier pretraining), ``train`` (single-rate, adaptive,
or baseline), ``evaluate``, ``finetune`` (per-dims server-side table),
``simulate`` (bandwidth-trace client/server run), ``flops``, and ``serve``
(HTTP inference service). Every command is deterministic given --seed.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure.
"""

import argparse
import sys
from pathlib import Path


from .container import load_container, save_model, save_table
from .data import LabeledDataset, load_cifar_binary, make_synthetic, split
from .errors import DimsError, FormatError, MclError, NumericError, PacketError
from .flops import count_flops, reference_network_specs
from .masks import MaskSpec
from .remote import ChannelTrace, run_session
from .training import (
    TrainConfig,
    evaluate,
    finetune_server_side,
    initialize_model,
    train_adaptive,
    train_single_rate,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _shape(text):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad shape {text!r}: {exc}") from exc
    if not values or any(v < 1 for v in values):
        raise UsageError(f"bad shape {text!r}: extents must be >= 1")
    return values


def _add_data_flags(p):
    p.add_argument("--synthetic", action="store_true", help="use the built-in synthetic dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=250)
    p.add_argument("--input-shape", type=_shape, default=(16, 16, 3))
    p.add_argument("--data-dir", type=Path, help="directory of .bin record files")
    p.add_argument("--fractions", type=str, default="0.8,0.1,0.1",
                   help="comma-separated split fractions (train[,val[,test]])")


def _add_train_flags(p, default_epochs):
    p.add_argument("--epochs", type=int, default=default_epochs)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--decay-factor", type=float, default=0.1)
    p.add_argument("--decay-epochs", type=str, default="",
                   help="comma-separated epoch indices where lr drops")
    p.add_argument("--weight-decay", type=float, default=5e-5)
    p.add_argument("--augment", action="store_true")


def _decay_epochs(text):
    return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()


def _resolve_datasets(args):
    """Returns {split name: dataset}; synthetic data is regenerated
    deterministically from the seed."""
    fractions = tuple(float(f) for f in args.fractions.split(",") if f.strip())
    if args.synthetic:
        full = make_synthetic(args.classes, args.samples_per_class,
                              args.input_shape, args.seed)
        parts = split(full, fractions, args.seed)
        return {p.split: p for p in parts}
    if args.data_dir is None:
        raise UsageError("provide --synthetic or --data-dir")
    train_files = sorted(args.data_dir.glob("data_batch_*.bin")) or \
        sorted(args.data_dir.glob("train*.bin"))
    test_files = sorted(args.data_dir.glob("test_batch*.bin")) or \
        sorted(args.data_dir.glob("test*.bin"))
    if not train_files:
        raise FormatError(f"no training .bin files under {args.data_dir}")
    samples = []
    for path in train_files:
        samples.extend(load_cifar_binary(path, class_count=args.classes).samples)
    full = LabeledDataset(samples, args.classes, split="train", provenance=str(args.data_dir))
    out = {}
    if len(fractions) > 1:
        parts = split(full, fractions[:2], args.seed)
        out["train"] = parts[0]
        out["val"] = LabeledDataset(parts[1].samples, args.classes, split="val",
                                    provenance=str(args.data_dir))
    else:
        out["train"] = full
    if test_files:
        tsamples = []
        for path in test_files:
            tsamples.extend(load_cifar_binary(path, split="test", class_count=args.classes).samples)
        out["test"] = LabeledDataset(tsamples, args.classes, split="test",
                                     provenance=str(args.data_dir))
    return out


def _metrics_sink(out_path):
    """Echo progress lines to stdout and collect them for the metrics file."""
    lines = []

    def sink(line):
        print(line)
        lines.append(line)

    def flush():
        if out_path is not None:
            Path(str(out_path) + ".metrics").write_text("\n".join(lines) + "\n" if lines else "")

    return sink, flush


def cmd_init(args):
    if len(args.widths) != 2:
        raise UsageError("--widths takes exactly two channel counts, e.g. 16,32")
    datasets = _resolve_datasets(args)
    train = datasets["train"]
    mask_spec = None
    if args.mask_min is not None:
        mask_spec = MaskSpec(args.mask_min, args.measurement_shape)
    pretrain_cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                               lr_decay_factor=args.decay_factor,
                               lr_decay_epochs=_decay_epochs(args.decay_epochs),
                               weight_decay=args.weight_decay, seed=args.seed,
                               augment=args.augment)
    sink, flush = _metrics_sink(args.out)
    model, core_energy = initialize_model(train, args.measurement_shape, args.seed,
                                          widths=args.widths, mask_spec=mask_spec,
                                          pretrain_cfg=pretrain_cfg, sink=sink)
    save_model(model, args.out)
    flush()
    print(f"core_energy={core_energy:.10f}")
    print(f"saved={args.out}")
    return 0


def cmd_train(args):
    loaded = load_container(args.model)
    model = loaded.model
    datasets = _resolve_datasets(args)
    train = datasets["train"]
    val = datasets.get("val")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                      lr_decay_factor=args.decay_factor,
                      lr_decay_epochs=_decay_epochs(args.decay_epochs),
                      weight_decay=args.weight_decay, seed=args.seed,
                      augment=args.augment,
                      mask_mode="adaptive" if args.mode == "adaptive" else "none")
    sink, flush = _metrics_sink(args.out)
    if args.mode == "adaptive":
        if args.mask_min is not None:
            model = model.with_parameters(model.parameters(),
                                          mask_spec=MaskSpec(args.mask_min, model.measurement_shape))
        if model.mask_spec is None:
            raise UsageError("adaptive mode needs --mask-min (or a mask spec in the container)")
        trained = train_adaptive(model, train, cfg, sink=sink, val_dataset=val)
    elif args.mode in ("single", "baseline"):
        trained = train_single_rate(model, train, cfg, sink=sink, val_dataset=val)
        if args.mode == "baseline":
            trained = trained.with_parameters(trained.parameters(), training_mode="baseline")
    else:
        raise UsageError(f"unknown mode {args.mode!r}")
    save_model(trained, args.out)
    flush()
    print(f"saved={args.out}")
    return 0


def cmd_evaluate(args):
    loaded = load_container(args.model)
    datasets = _resolve_datasets(args)
    if args.split not in datasets:
        raise UsageError(f"split {args.split!r} not available (have {sorted(datasets)})")
    dataset = datasets[args.split]
    for dims in args.dims:
        model = loaded.model
        if loaded.table is not None:
            if tuple(dims) not in loaded.table:
                raise DimsError(f"table has no entry for dims {tuple(dims)}")
            synthesis, network = loaded.table[tuple(dims)]
            params = model.parameters()
            for k, a in enumerate(synthesis.matrices):
                params[f"synthesis_{k}"] = a
            for name, a in network.params.items():
                params[f"net.{name}"] = a
            model = model.with_parameters(params)
        acc = evaluate(model, dims, dataset)
        label = "x".join(str(m) for m in dims)
        print(f"dims={label} split={args.split} accuracy={acc:.6f}")
    return 0


def cmd_finetune(args):
    loaded = load_container(args.model)
    model = loaded.model
    if model.training_mode not in ("adaptive", "single", "baseline"):
        raise UsageError("finetune expects a trained model container")
    datasets = _resolve_datasets(args)
    train = datasets["train"]
    table = {}
    for dims in args.dims:
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                          lr_decay_factor=args.decay_factor,
                          lr_decay_epochs=_decay_epochs(args.decay_epochs),
                          weight_decay=args.weight_decay, seed=args.seed,
                          augment=args.augment)
        table[tuple(dims)] = finetune_server_side(model, dims, train, cfg)
        print(f"finetuned dims={'x'.join(str(m) for m in dims)} epochs={args.epochs}")
    save_table(model, table, args.out)
    print(f"saved={args.out}")
    return 0


def cmd_simulate(args):
    loaded = load_container(args.model)
    datasets = _resolve_datasets(args)
    if args.split not in datasets:
        raise UsageError(f"split {args.split!r} not available (have {sorted(datasets)})")
    dataset = datasets[args.split]
    trace = ChannelTrace.from_file(args.trace)
    report = run_session(loaded.model, dataset, trace, args.deadline,
                         table=loaded.table, transport=args.transport)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text.splitlines()[-1])
    return 0


def cmd_flops(args):
    loaded = load_container(args.model) if args.model else None
    if args.reference or loaded is None:
        specs = reference_network_specs()
        report = count_flops((32, 32, 3), (15, 15, 2), specs)
        scope = "reference"
    else:
        model = loaded.model
        report = count_flops(model.input_shape, model.measurement_shape, model.network.specs)
        scope = "model"
    print(f"scope={scope}")
    print(f"mcs_flops={report.mcs_flops}")
    print(f"fs_flops={report.fs_flops}")
    print(f"tasknet_flops={report.tasknet_flops}")
    print(f"vector_sense_flops={report.vector_sense_flops}")
    print(f"ratio={report.ratio:.8f}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(model_paths=args.model or [])
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_remote_predict(args):
    import json
    import urllib.request

    payload = Path(args.packet).read_bytes()
    req = urllib.request.Request(
        f"{args.server.rstrip('/')}/models/{args.model_id}/predict",
        data=payload, headers={"Content-Type": "application/octet-stream"})
    with urllib.request.urlopen(req) as resp:
        print(json.dumps(json.loads(resp.read()), sort_keys=True))
    return 0


def build_parser():
    parser = _Parser(prog="mcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="initialize operators from data and pretrain the classifier")
    _add_data_flags(p)
    _add_train_flags(p, default_epochs=20)
    p.add_argument("--measurement-shape", type=_shape, required=True)
    p.add_argument("--mask-min", type=_shape, default=None)
    p.add_argument("--widths", type=_shape, default=(16, 32))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("train", help="train a model (single | adaptive | baseline)")
    _add_data_flags(p)
    _add_train_flags(p, default_epochs=60)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("single", "adaptive", "baseline"), required=True)
    p.add_argument("--mask-min", type=_shape, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy at one or more measurement dims")
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dims", type=_shape, action="append", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("finetune", help="per-dims server-side finetuning table")
    _add_data_flags(p)
    _add_train_flags(p, default_epochs=30)
    p.add_argument("--model", required=True)
    p.add_argument("--dims", type=_shape, action="append", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_finetune, lr=0.0001)  # constant finetune lr

    p = sub.add_parser("simulate", help="client/server run under a bandwidth trace")
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--deadline", type=float, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--transport", choices=("memory", "tcp"), default="memory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("flops", help="flop accounting for a model or the reference config")
    p.add_argument("--model", default=None)
    p.add_argument("--reference", action="store_true")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--model", action="append", help="container(s) to preload")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("remote-predict", help="thin client: POST a packet file to a serve instance")
    p.add_argument("--server", required=True)
    p.add_argument("--model-id", required=True)
    p.add_argument("--packet", required=True)
    p.set_defaults(fn=cmd_remote_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DimsError as exc:
        print(f"dims error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, PacketError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except MclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
