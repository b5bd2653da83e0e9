"""Command-line interface: ``musicssl <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
3 verification failure. Metrics and reports are JSON lines.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import coder, data, diagnostics, trainer
from . import diffcore as dc
from . import model as mdl
from .errors import ConfigError, MusicError, NumericError
from .loss import total_loss

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _writable(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError(f"output directory does not exist: {parent}")
    return path


def _write_records(path, records):
    _writable(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def cmd_gen_data(args):
    ds = data.gen_clusters(args.classes, args.dim_signal, args.dim_nuisance, args.per_class,
                           args.separation, args.noise, args.seed, args.nuisance_noise)
    data.save_dataset(ds, _writable(args.out))
    print(f"wrote {args.out}: n={len(ds)} dim={ds.dim} classes={args.classes} "
          f"per_class={args.per_class} seed={args.seed}")
    return EXIT_OK


def cmd_init_config(args):
    text = trainer.dump_config(trainer.TrainConfig())
    if args.out:
        with open(_writable(args.out), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_train_config(args):
    config = trainer.load_config(args.config) if args.config else trainer.TrainConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    if overrides:
        merged = config.to_dict()
        merged.update(overrides)
        config = trainer.TrainConfig.from_dict(merged)
    return config


def cmd_train(args):
    config = _load_train_config(args)
    ds = data.load_dataset(args.data)
    _writable(args.out_ckpt)
    metrics_fh = open(_writable(args.metrics), "w") if args.metrics else None
    last = {}

    def emit(record):
        last.update(record)
        if metrics_fh:
            metrics_fh.write(trainer.format_metrics(record) + "\n")
            metrics_fh.flush()
        if args.verbose:
            print(trainer.format_metrics(record), file=sys.stderr)

    try:
        ckpt = trainer.fit(ds, config, on_epoch=emit, record_wall_time=args.record_wall_time)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if exc.breakdown is not None:
            print(json.dumps(exc.breakdown.as_dict()), file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if metrics_fh:
            metrics_fh.close()
    trainer.save_checkpoint(ckpt, args.out_ckpt)
    summary = f"trained {config.epochs} epochs, {ckpt.step} steps"
    if last:
        summary += (f"; loss_total={last['loss_total']:.6f} "
                    f"collapse_fraction={last['collapse_fraction']:.4f}")
    print(summary)
    return EXIT_OK


def _representation(ckpt, ds):
    if ds.dim != ckpt.params.encoder.in_dim:
        raise ConfigError(
            f"data dim {ds.dim} does not match checkpoint input dim {ckpt.params.encoder.in_dim}")
    return mdl.encode(ckpt.params, dc.Array(ds.samples.astype(ckpt.config.dtype))).data


def cmd_probe(args):
    ckpt = trainer.load_checkpoint(args.ckpt)
    ds = data.load_dataset(args.data)
    result = diagnostics.linear_probe(_representation(ckpt, ds), ds.labels,
                                      split_seed=args.split_seed, epochs=args.epochs, lr=args.lr)
    record = {"record": "probe", "ckpt": os.path.basename(args.ckpt), "step": ckpt.step,
              "split_seed": args.split_seed, "epochs": args.epochs, "lr": args.lr, **result}
    if args.report:
        _write_records(args.report, [record])
    print(f"probe {args.ckpt}: train_acc={result['train_acc']:.4f} "
          f"test_acc={result['test_acc']:.4f} classes={result['classes']}")
    return EXIT_OK


def cmd_analyze(args):
    if args.ideal_codes:
        if args.ckpt:
            seg = trainer.load_checkpoint(args.ckpt).config.segment_config
        else:
            seg = coder.SegmentConfig(args.segments, args.segment_dim)
        code = diagnostics.ideal_codes(seg)
        other = code if args.cross_view else None
        source = "ideal"
    else:
        if not (args.ckpt and args.data):
            raise ConfigError("analyze needs --ckpt and --data (or --ideal-codes)")
        ckpt = trainer.load_checkpoint(args.ckpt)
        ds = data.load_dataset(args.data)
        config = ckpt.config
        seg = config.segment_config
        if ds.dim != ckpt.params.encoder.in_dim:
            raise ConfigError(
                f"data dim {ds.dim} does not match checkpoint input dim {ckpt.params.encoder.in_dim}")
        size = min(args.batch_size or config.batch_size, len(ds))
        idx = np.sort(np.random.default_rng(args.seed).choice(len(ds), size, replace=False))

        def codes_of(x):
            emb = mdl.embed(ckpt.params, dc.Array(x.astype(config.dtype)))
            return coder.encode(emb, seg).data

        if args.cross_view:
            v1, v2 = data.batch_views(ds.samples, idx, config.augment_spec, args.seed, 0,
                                      data.noise_scale(ds.samples))
            code, other = codes_of(v1), codes_of(v2)
        else:
            code, other = codes_of(ds.samples[idx]), None
        source = "checkpoint"
    report = diagnostics.theory_report(code, other)
    pair = other if other is not None else code
    _, breakdown = total_loss(dc.Array(code), dc.Array(pair), seg, 1.0)
    records = [
        {"record": "theory", "source": source, "num_segments": seg.num_segments,
         "segment_dim": seg.segment_dim, **report.as_dict()},
        {"record": "loss", **breakdown.as_dict()},
        {"record": "entropy_reference", **diagnostics.entropy_reference(seg)},
        {"record": "capacity", "capacity": diagnostics.encoding_capacity(seg)},
    ]
    if args.report:
        _write_records(args.report, records)
    mi = np.array(report.mi_matrix)
    off = mi[~np.eye(len(mi), dtype=bool)]
    print(f"analyze ({source}, {report.mi_variant}): max_offdiag_mi="
          f"{(off.max() if off.size else 0.0):.3g} marginal_deviation={report.marginal_deviation:.4f} "
          f"collapse_fraction={max(report.collapse_fraction):.4f} "
          f"collapse_flag={report.collapse_flag}")
    return EXIT_OK


def gradcheck_problem(seed, batch, segments, segment_dim, input_dim, hidden):
    """Leaves and loss function for a tiny encoder + projector + full loss graph."""
    seg = coder.SegmentConfig(segments, segment_dim)
    enc = mdl.MlpSpec([input_dim, hidden, hidden])
    proj = mdl.MlpSpec([hidden, hidden, seg.embed_dim])
    params = mdl.init(enc, proj, seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 1])
    for name, value in params.values.items():
        if name.endswith(".b"):
            value[:] = 0.1 * rng.standard_normal(value.shape)
    x1 = rng.standard_normal((batch, input_dim))
    x2 = x1 + 0.3 * rng.standard_normal((batch, input_dim))
    names = params.names()

    def fn(*leaves):
        bound = dict(zip(names, leaves))
        p1 = coder.encode(mdl.embed(params, x1, bound), seg)
        p2 = coder.encode(mdl.embed(params, x2, bound), seg)
        return total_loss(p1, p2, seg, 1.0)[0]

    return fn, dict(params.values)


def cmd_gradcheck(args):
    fn, leaves = gradcheck_problem(args.seed, args.batch, args.segments, args.segment_dim,
                                   args.input_dim, args.hidden)
    if args.inject_fault:
        with dc.inject_fault(args.inject_fault):
            report = dc.grad_check(fn, leaves, step=args.step, tolerance=args.tolerance)
    else:
        report = dc.grad_check(fn, leaves, step=args.step, tolerance=args.tolerance)
    line = (f"gradcheck: max_rel_error={report.max_rel_error:.3e} tolerance={args.tolerance:.1e} "
            f"evaluations={report.evaluations}")
    if report.passed:
        print(line + " PASS")
        return EXIT_OK
    worst = f"{report.worst_leaf}{list(report.worst_index or ())}"
    extra = f" nonfinite={report.nonfinite}" if report.nonfinite else ""
    print(line + f" FAIL worst={worst}{extra}")
    return EXIT_VERIFY


def build_parser():
    parser = _Parser(prog="musicssl", description=__doc__.splitlines()[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-data", help="write a synthetic cluster dataset", formatter_class=fmt)
    p.add_argument("--classes", type=int, default=8, help="number of classes")
    p.add_argument("--dim-signal", type=int, default=16, help="dims carrying class means")
    p.add_argument("--dim-nuisance", type=int, default=48, help="pure-noise dims")
    p.add_argument("--per-class", type=int, default=512, help="samples per class")
    p.add_argument("--separation", type=float, default=data.DEFAULT_SEPARATION,
                   help="scale of the Gaussian class means")
    p.add_argument("--noise", type=float, default=1.0, help="within-class noise std")
    p.add_argument("--nuisance-noise", type=float, default=data.DEFAULT_NUISANCE_STD,
                   help="std of the nuisance dims")
    p.add_argument("--seed", type=int, default=7, help="generator seed")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init-config", help="print or write the default run config",
                       formatter_class=fmt)
    p.add_argument("--out", help="file to write (default: stdout)")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("train", help="train an encoder and write a checkpoint", formatter_class=fmt)
    p.add_argument("--config", help="JSON run config (default: built-in defaults)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out-ckpt", required=True, help="checkpoint file to write")
    p.add_argument("--metrics", help="JSON-lines metrics file, one record per epoch")
    p.add_argument("--record-wall-time", action="store_true",
                   help="fill wall_ms (otherwise null, keeping metrics byte-reproducible)")
    p.add_argument("--verbose", action="store_true", help="echo metrics to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="linear-probe the frozen representation", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--report", help="JSON-lines report file")
    p.add_argument("--split-seed", type=int, default=0, help="seed of the 80/20 split")
    p.add_argument("--epochs", type=int, default=500, help="gradient-descent iterations")
    p.add_argument("--lr", type=float, default=0.5, help="probe learning rate")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("analyze", help="code statistics: marginals, MI, covariance, collapse",
                       formatter_class=fmt)
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--report", help="JSON-lines report file")
    p.add_argument("--batch-size", type=int, default=0,
                   help="samples in the analyzed batch (0: the config's batch_size)")
    p.add_argument("--seed", type=int, default=0, help="seed choosing the batch and views")
    p.add_argument("--cross-view", action="store_true",
                   help="MI between two augmented views instead of within one view")
    p.add_argument("--ideal-codes", action="store_true",
                   help="analyze constructed balanced one-hot codes instead of a model")
    p.add_argument("--segments", type=int, default=2, help="S for --ideal-codes without --ckpt")
    p.add_argument("--segment-dim", type=int, default=2,
                   help="D_S for --ideal-codes without --ckpt")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss graph",
                       formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="parameter and input seed")
    p.add_argument("--batch", type=int, default=8, help="batch size N")
    p.add_argument("--segments", type=int, default=2, help="S")
    p.add_argument("--segment-dim", type=int, default=2, help="D_S")
    p.add_argument("--input-dim", type=int, default=4, help="input width")
    p.add_argument("--hidden", type=int, default=8, help="hidden and representation width")
    p.add_argument("--step", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=1e-5, help="max relative error")
    p.add_argument("--inject-fault", metavar="OP",
                   help="corrupt OP's derivative by 1%% to confirm the check fails")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MusicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
