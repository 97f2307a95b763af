"""Command-line pipeline: generate scenes, train, calibrate, evaluate, detect.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
mismatched files), 3 numerical failure (divergence, degenerate values,
non-convergent fits).  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

from .calibration import calibrate, load_calibration, save_calibration
from .detector import CHANNELS, SceneModel, confusion, format_confusion
from .errors import (
    DegenerateMean,
    DegenerateQuaternion,
    InsufficientPopulation,
    InsufficientVariance,
    InvalidArchitecture,
    InvalidSpec,
    NoConvergence,
    NonFiniteLoss,
    NonPositiveValue,
    ParseError,
    ShapeMismatch,
)
from .geometry import LossConfig
from .harness import (
    read_query_table,
    run_eval,
    run_histogram,
    run_sweep,
    run_timing,
    write_histogram,
    write_query_table,
    write_summary,
    write_sweep,
)
from .mc_posterior import localize
from .regressor import (
    LayerSpec,
    TrainConfig,
    build_network,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .scenes import SceneSpec, generate_scene, load_dataset, load_scene_spec, save_dataset
from .seeding import derive_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (
    ParseError,
    ShapeMismatch,
    InvalidSpec,
    InvalidArchitecture,
    InsufficientPopulation,
    NonPositiveValue,
    OSError,
    ValueError,
)
_NUMERIC_ERRORS = (
    NonFiniteLoss,
    NoConvergence,
    DegenerateQuaternion,
    DegenerateMean,
    InsufficientVariance,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise _UsageError(f"{flag} expects comma-separated integers: {e}") from e


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise _UsageError(f"{flag} expects comma-separated numbers: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    common.add_argument(
        "--samples", type=int, default=40, help="Monte Carlo samples per query (default 40)"
    )

    parser = _Parser(prog="bayesreloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic scene dataset")
    p.add_argument("--scene-id", help="scene identifier (defaults from --spec)")
    p.add_argument("--spec", help="scene spec JSON to regenerate from")
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--calib", type=int, default=200)
    p.add_argument("--test", type=int, default=400)
    p.add_argument("--aliasing-period", type=float, default=None)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a pose regressor")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--hidden", default="128,128", help="hidden widths, comma-separated")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--beta", type=float, default=50.0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--aux-after", type=int, default=None, help="hidden layer feeding an auxiliary head")
    p.add_argument("--out", required=True, help="checkpoint file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", parents=[common], help="fit per-scene gamma calibration")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument(
        "--use-test-split",
        action="store_true",
        help="fit on the test split instead of the held-out calibration split",
    )
    p.add_argument("--out", required=True, help="calibration file")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("eval", parents=[common], help="evaluate on the test split")
    p.add_argument("--net", required=True)
    p.add_argument("--cal", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output prefix (.summary.json, .queries.tsv)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="median error vs sample count")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--counts", default="1,5,40,128")
    p.add_argument("--reps", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("hist", parents=[common], help="cumulative error histogram from an eval table")
    p.add_argument("--table", required=True, help="per-query table from eval")
    p.add_argument("--thresholds", default="0.5,1,2,5,10")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_hist)

    p = sub.add_parser("detect", parents=[common], help="scene recognition confusion matrix")
    p.add_argument(
        "--scene",
        nargs=4,
        metavar=("ID", "NET", "CAL", "DATA"),
        action="append",
        required=True,
        help="one candidate scene (repeat for each)",
    )
    p.add_argument("--channel", choices=CHANNELS, default="combined")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("time", parents=[common], help="wall-clock statistics per query")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--min-queries", type=int, default=100)
    p.add_argument("--out", default=None, help="optional output file")
    p.set_defaults(func=_cmd_time)

    return parser


def _cmd_gen(args) -> int:
    if args.spec:
        spec = load_scene_spec(args.spec)
        if args.scene_id and args.scene_id != spec.scene_id:
            raise _UsageError(f"--scene-id {args.scene_id!r} conflicts with spec {spec.scene_id!r}")
    else:
        if not args.scene_id:
            raise _UsageError("gen needs --scene-id (or --spec)")
        spec = SceneSpec(
            scene_id=args.scene_id,
            generator_seed=args.seed,
            aliasing_period=args.aliasing_period,
        )
    dataset = generate_scene(spec, args.train, args.calib, args.test)
    save_dataset(args.out, dataset)
    print(
        f"wrote scene {spec.scene_id!r} to {args.out} "
        f"(train={args.train} calib={args.calib} test={args.test})"
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    hidden = _int_list(args.hidden, "--hidden")
    if not hidden:
        raise _UsageError("--hidden needs at least one width")
    widths = [dataset.spec.feature_dim] + hidden + [7]
    specs = []
    n_layers = len(widths) - 1
    for i in range(n_layers):
        specs.append(
            LayerSpec(
                input_width=widths[i],
                output_width=widths[i + 1],
                has_dropout=i >= n_layers - 2,
                activation="identity" if i == n_layers - 1 else "relu",
            )
        )
    net = build_network(specs, args.dropout, args.seed, aux_after=args.aux_after)
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        loss=LossConfig(beta=args.beta),
        seed=args.seed,
        momentum=args.momentum,
    )
    examples = [(ex.features, ex.pose) for ex in dataset.train]
    result = train(net, examples, config)
    save_checkpoint(args.out, result.net)
    print(
        f"trained {len(hidden) + 1} layers for {args.epochs} epochs; "
        f"loss {result.epoch_losses[0]:.4f} -> {result.epoch_losses[-1]:.4f}; wrote {args.out}"
    )
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    net = load_checkpoint(args.net)
    dataset = load_dataset(args.data)
    split = dataset.test if args.use_test_split else dataset.calib
    if dataset.spec.feature_dim != net.input_width:
        raise ShapeMismatch(
            f"dataset feature_dim {dataset.spec.feature_dim} does not match "
            f"network input width {net.input_width}"
        )
    traces = []
    for qi, ex in enumerate(split):
        _, est = localize(net, ex.features, args.samples, derive_seed(args.seed, qi))
        traces.append((est.trans_trace, est.rot_trace))
    model = calibrate(traces, dataset.spec.scene_id)
    save_calibration(args.out, model)
    print(
        f"calibrated {model.source_scene!r} on {model.population_size} queries: "
        f"trans k={model.trans.shape:.4g} theta={model.trans.scale:.4g} (ks={model.trans_ks:.3f}), "
        f"rot k={model.rot.shape:.4g} theta={model.rot.scale:.4g} (ks={model.rot_ks:.3f})"
    )
    return EXIT_OK


def _load_scene_model(net_path: str, cal_path: str, scene_id: str) -> SceneModel:
    return SceneModel(
        scene_id=scene_id,
        network=load_checkpoint(net_path),
        calibration=load_calibration(cal_path),
    )


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    model = _load_scene_model(args.net, args.cal, dataset.spec.scene_id)
    report = run_eval(model, dataset, args.samples, args.seed)
    write_summary(args.out + ".summary.json", report)
    write_query_table(args.out + ".queries.tsv", report)
    s = report.summary
    print(
        f"evaluated {s.query_count} queries at {s.num_samples} samples: "
        f"median {s.median_trans_error:.3f} m / {s.median_rot_error_deg:.3f} deg"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    net = load_checkpoint(args.net)
    dataset = load_dataset(args.data)
    counts = _int_list(args.counts, "--counts")
    if not counts:
        raise _UsageError("--counts needs at least one sample count")
    sweep = run_sweep(net, dataset, counts, args.reps, args.seed)
    write_sweep(args.out, sweep)
    print(f"swept counts {sorted(set(counts) | {0})} with {args.reps} repetitions; wrote {args.out}")
    return EXIT_OK


def _cmd_hist(args) -> int:
    records = read_query_table(args.table)
    thresholds = _float_list(args.thresholds, "--thresholds")
    if thresholds != sorted(thresholds):
        raise _UsageError("--thresholds must be sorted ascending")
    hist = run_histogram(records, thresholds)
    write_histogram(args.out, hist)
    print(f"histogram over {hist.query_count} queries at {len(thresholds)} thresholds; wrote {args.out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    models = []
    test_sets = {}
    for scene_id, net_path, cal_path, data_dir in args.scene:
        models.append(_load_scene_model(net_path, cal_path, scene_id))
        dataset = load_dataset(data_dir)
        if dataset.spec.scene_id != scene_id:
            raise ParseError(
                f"dataset at {data_dir} is for scene {dataset.spec.scene_id!r}, not {scene_id!r}"
            )
        test_sets[scene_id] = [ex.features for ex in dataset.test]
    matrix = confusion(models, test_sets, args.samples, args.seed, args.channel)
    text = format_confusion(matrix)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_time(args) -> int:
    net = load_checkpoint(args.net)
    dataset = load_dataset(args.data)
    report = run_timing(net, dataset, args.samples, args.seed, args.min_queries)
    line = (
        f"{report.query_count} queries at {report.num_samples} samples: "
        f"mean {report.mean_s * 1e3:.3f} ms, p50 {report.p50_s * 1e3:.3f} ms, "
        f"p99 {report.p99_s * 1e3:.3f} ms"
    )
    print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(line + "\n")
    return EXIT_OK


def cli(argv: list[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
