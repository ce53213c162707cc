"""Command-line surface.

Subcommands: build-octree, partition, attend, train-toy, segment, bench,
selftest. Exit codes: 0 success, 1 usage error, 2 data/config error,
3 numeric or training failure.

Thread control: `--threads N` (default: the OCTFORMER_THREADS environment
variable) caps the BLAS thread pools. It must take effect before numpy is
first imported, so heavy modules are imported lazily inside the command
handlers.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("OCTFORMER_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="octformer",
                     description="Octree window attention toolkit")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count (default: $OCTFORMER_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-octree", help="build and dump an octree")
    p.add_argument("input")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--dump", required=True)

    p = sub.add_parser("partition", help="dump a window partition as CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--csv", default=None, help="output path (default stdout)")

    p = sub.add_parser("attend", help="run one transformer block, print a checksum")
    p.add_argument("input")
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-toy", help="overfit a tiny model on synthetic data")
    p.add_argument("--config", required=True)

    p = sub.add_parser("segment", help="write per-point labels for a cloud")
    p.add_argument("input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--out", default=None, help="output path (default stdout)")

    p = sub.add_parser("bench", help="run the attention scaling benchmark")
    p.add_argument("--config", required=True)

    sub.add_parser("selftest", help="run the oracle equivalence suite")
    return parser


def _cmd_build_octree(args) -> int:
    from .octree import build_octree, dump_octree
    from .pointcloud import load_point_cloud

    cloud = load_point_cloud(args.input, args.depth, args.scale)
    tree = build_octree(cloud)
    dump_octree(tree, args.dump)
    counts = " ".join(str(tree.node_count(lv)) for lv in range(1, tree.depth + 1))
    print(f"octree depth {tree.depth} nodes-per-depth {counts}")
    return EXIT_OK


def _cmd_partition(args) -> int:
    from .partition import make_plan, plan_to_csv

    csv_text = plan_to_csv(make_plan(args.n, args.k, args.d))
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _cmd_attend(args) -> int:
    import numpy as np

    from .network import BlockParams, octformer_block
    from .octree import build_octree, init_leaf_features
    from .pointcloud import load_point_cloud
    from .tensor import LinearParams, linear

    cloud = load_point_cloud(args.input, args.depth, args.scale)
    tree = build_octree(cloud)
    feats = init_leaf_features(tree, cloud, use_position=True,
                               use_color=cloud.colors is not None,
                               use_normal=cloud.normals is not None)
    rng = np.random.default_rng(args.seed)
    c = args.channels
    lift = LinearParams.init(feats.shape[1], c, rng)
    block = BlockParams.init(c, heads=max(1, c // 16), ratio=4, dilation=args.d,
                             rng=rng)
    out = octformer_block(linear(feats, lift), tree, tree.depth, block,
                          point_number=args.k, training=False)
    checksum = float(np.abs(out.data.astype(np.float64)).sum())
    print(f"nodes {out.shape[0]} channels {out.shape[1]} checksum {checksum:.8e}")
    return EXIT_OK


def _cmd_train_toy(args) -> int:
    from .config import load_run_config
    from .network import save_checkpoint, train_toy
    from .synthetic import two_spheres_dataset

    run = load_run_config(args.config)
    if run.dataset.kind != "two-spheres":
        raise UsageError("train-toy supports the two-spheres dataset")
    dataset = two_spheres_dataset(run.dataset.n_clouds,
                                  run.dataset.points_per_cloud,
                                  run.dataset.depth, run.dataset.seed)
    net = run.network.build()
    result = train_toy(dataset, net, run.training.build())
    lines = ["step,lr,loss,accuracy"]
    lines += [f"{r['step']},{r['lr']:.6e},{r['loss']:.6e},{r['accuracy']:.6f}"
              for r in result.records]
    curve = "\n".join(lines) + "\n"
    if run.outputs.loss_curve:
        with open(run.outputs.loss_curve, "w") as f:
            f.write(curve)
    else:
        sys.stdout.write(curve)
    if run.outputs.checkpoint:
        save_checkpoint(run.outputs.checkpoint, result.model)
    print(f"initial_loss {result.initial_loss:.6f} final_loss "
          f"{result.final_loss:.6f} final_accuracy {result.final_accuracy:.6f}")
    return EXIT_OK


def _cmd_segment(args) -> int:
    from .network import load_checkpoint, segment_logits
    from .pointcloud import load_point_cloud

    model = load_checkpoint(args.ckpt)
    cloud = load_point_cloud(args.input, model.config.octree_depth, args.scale)
    logits = segment_logits(cloud, model, training=False)
    labels = logits.data.argmax(axis=1)
    text = "\n".join(str(int(v)) for v in labels) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .bench import bench_attention, rows_to_csv
    from .config import load_run_config

    run = load_run_config(args.config)
    settings = run.bench.build()
    rows = []
    for variant in run.bench.variants:
        rows.extend(bench_attention(list(run.bench.sizes), variant, settings))
    csv_text = rows_to_csv(rows)
    if run.outputs.bench_csv:
        with open(run.outputs.bench_csv, "w") as f:
            f.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _cmd_selftest(_args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_NUMERIC


_COMMANDS = {
    "build-octree": _cmd_build_octree,
    "partition": _cmd_partition,
    "attend": _cmd_attend,
    "train-toy": _cmd_train_toy,
    "segment": _cmd_segment,
    "bench": _cmd_bench,
    "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(args.threads)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    from .errors import ConfigError, DataError, NumericError, TrainingError

    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
