"""Command-line entry point: ``c3sl <command> [flags]``.

Exit codes: 0 success, 2 usage, 3 protocol, 4 numeric, 5 I/O, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, accounting, bench, codec, pipeline, transport
from .errors import C3SLError, ContractViolation, InvalidArgument, NumericError, ProtocolError

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_PROTOCOL, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4, 5

log = logging.getLogger("c3sl")

CUTS = {"vgg16": accounting.VGG16_CUT, "resnet50": accounting.RESNET50_CUT}


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def seed_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def widths(text: str) -> tuple[int, ...]:
    """Comma-separated hidden widths; empty string means no hidden layer."""
    if not text.strip():
        return ()
    return tuple(positive_int(part) for part in text.split(","))


def _add_globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # on subcommands the defaults are suppressed so flags may sit on either side
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=seed_int, default=default(0), help="master seed (default 0)")
    parser.add_argument("--out", default=default(None),
                        help="output directory (keygen: key file path)")
    parser.add_argument("--format", choices=["csv", "json"], default=default("csv"),
                        help="stdout rendering; output files are always written")
    parser.add_argument("--quiet", action="store_true", default=default(False),
                        help="print nothing but errors")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ratio", type=positive_int, default=1, help="compression ratio R")
    p.add_argument("--dim", type=positive_int, default=64, help="cut-layer width D")
    p.add_argument("--batch", type=positive_int, default=64, help="batch size B")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dataset", default="blobs", help="blobs or idx:DIR")
    p.add_argument("--strict", action="store_true", help="require R to divide B")
    p.add_argument("--delta-keys", action="store_true", help="coordinate delta keys (debug)")
    p.add_argument("--edge-hidden", type=widths, default=(128,))
    p.add_argument("--cloud-hidden", type=widths, default=(128,))
    p.add_argument("--wire-dtype", choices=sorted(pipeline.WIRE_DTYPES), default="float32")
    p.add_argument("--classes", type=positive_int, default=4, help="blob classes")
    p.add_argument("--n-train", type=positive_int, default=2000)
    p.add_argument("--n-test", type=positive_int, default=500)
    p.add_argument("--input-dim", type=positive_int, default=64)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--timing", action="store_true", help="add wall_ms to steps.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c3sl", description="Batch-wise compressed split learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)

    p = sub.add_parser("keygen", parents=[common], help="write a key file")
    p.add_argument("--dim", type=positive_int, required=True)
    p.add_argument("--count", type=positive_int, required=True)
    p.add_argument("--delta-keys", action="store_true")

    p = sub.add_parser("bench", parents=[common], help="Monte-Carlo retrieval quality")
    p.add_argument("--dim", type=positive_int, default=2048)
    p.add_argument("--ratio", type=positive_int, nargs="+", default=[2, 4, 8, 16])
    p.add_argument("--trials", type=positive_int, default=100)
    p.add_argument("--delta-keys", action="store_true")

    p = sub.add_parser("train", parents=[common], help="in-process training")
    _add_model_flags(p)

    p = sub.add_parser("serve-cloud", parents=[common], help="run the cloud half")
    p.add_argument("--listen", required=True, help="host:port (port 0 picks a free one)")
    p.add_argument("--dim", type=positive_int, default=64)
    p.add_argument("--classes", type=positive_int, default=4)
    p.add_argument("--hidden", type=widths, default=(128,))
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--sessions", type=positive_int, default=1)

    p = sub.add_parser("run-edge", parents=[common], help="run the edge half")
    p.add_argument("--connect", required=True, help="host:port of serve-cloud")
    p.add_argument("--timeout", type=float, default=10.0, help="connect timeout in seconds")
    _add_model_flags(p)

    p = sub.add_parser("report", parents=[common], help="parameter/FLOP/traffic table")
    p.add_argument("--cut", choices=sorted(CUTS), default="vgg16")
    p.add_argument("--ratios", type=positive_int, nargs="+", default=[2, 4, 8, 16])
    p.add_argument("--batch", type=positive_int, default=accounting.REF_BATCH)
    p.add_argument("--kernel", type=positive_int, default=accounting.REF_KERNEL)
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, text: str) -> None:
    if not args.quiet:
        print(text, flush=True)


def train_config(args) -> pipeline.TrainConfig:
    return pipeline.TrainConfig(
        ratio=args.ratio, batch_size=args.batch, dim=args.dim, seed=args.seed, epochs=args.epochs,
        lr=args.lr, dataset=args.dataset, strict_grouping=args.strict,
        key_mode="delta" if args.delta_keys else "gaussian", edge_hidden=args.edge_hidden,
        cloud_hidden=args.cloud_hidden, wire_dtype=args.wire_dtype, num_classes=args.classes,
        n_train=args.n_train, n_test=args.n_test, input_dim=args.input_dim,
        separation=args.separation)


def cmd_keygen(args) -> int:
    keys = (codec.delta_keys(args.dim, args.count) if args.delta_keys
            else codec.generate_keys(args.dim, args.count, args.seed))
    path = Path(args.out) if args.out else Path("keys.c3ks")
    codec.write_key_file(keys, path)
    _emit(args, f"params: {keys.param_count}")
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = bench.sweep(args.dim, args.ratio, args.trials, args.seed, args.delta_keys)
    out = _out_dir(args)
    bench.write_csv(rows, out / "bench.csv")
    if args.format == "json":
        _emit(args, json.dumps([asdict(r) for r in rows], indent=2))
    else:
        _emit(args, (out / "bench.csv").read_text().rstrip())
    return EXIT_OK


def _print_summary(args, summary: dict) -> None:
    if args.format == "json":
        _emit(args, json.dumps(summary, indent=2, sort_keys=True))
    else:
        keys = ["steps", "final_loss", "final_accuracy", "total_bytes", "compression_ratio"]
        _emit(args, ",".join(keys))
        _emit(args, ",".join(str(summary.get(k)) for k in keys))


def cmd_train(args) -> int:
    config = train_config(args)
    dataset = pipeline.load_dataset(config)
    result = pipeline.train(config, dataset)
    out = _out_dir(args)
    pipeline.write_steps_csv(result.steps, out / "steps.csv", timing=args.timing)
    summary = pipeline.summarize(config, result, len(dataset.x_train))
    pipeline.write_summary(summary, out / "summary.json")
    _print_summary(args, summary)
    return EXIT_OK


def _write_cloud_metrics(out: Path, sessions: list[dict], losses: list[tuple]) -> None:
    with open(out / "cloud_steps.csv", "w") as fh:
        fh.write("session,batch_id,loss\n")
        fh.writelines(f"{s},{b},{loss!r}\n" for s, b, loss in losses)
    pipeline.write_summary({"sessions": sessions}, out / "cloud_summary.json")


def cmd_serve_cloud(args) -> int:
    spec = transport.CloudSpec(args.dim, args.classes, tuple(args.hidden), args.seed, args.lr)
    out = _out_dir(args)
    srv = transport.listen(args.listen)
    host, port = srv.getsockname()[:2]
    # always printed: scripts need the port when --listen asks for port 0
    print(f"listening on {host}:{port}", flush=True)
    sessions, losses = [], []
    try:
        for n in range(args.sessions):
            sock, peer = srv.accept()
            log.info("session from %s:%s", *peer[:2])
            conn = transport.Connection(sock)
            record = {"session": n, "batches": 0, "epochs": 0, "final_loss": None,
                      "completed": False}
            sessions.append(record)

            def on_loss(batch_id, loss, n=n, record=record):
                losses.append((n, batch_id, loss))
                record["batches"] += 1
                record["final_loss"] = loss

            try:
                res = transport.run_cloud(conn, spec, on_loss)
            finally:
                conn.close()
            record.update(epochs=res.epochs, completed=True)
            _emit(args, f"session {n} done: {record['batches']} batches, {res.epochs} epochs, "
                        f"final loss {record['final_loss']}")
    finally:
        srv.close()
        _write_cloud_metrics(out, sessions, losses)
    return EXIT_OK


def cmd_run_edge(args) -> int:
    config = train_config(args)
    dataset = pipeline.load_dataset(config)
    out = _out_dir(args)
    steps: list[pipeline.StepMetrics] = []
    conn = transport.connect(args.connect, timeout=args.timeout)
    try:
        res = transport.run_edge(config, conn, dataset, on_step=steps.append)
    finally:
        conn.close()
        # flushed even when the session aborts part-way
        pipeline.write_steps_csv(steps, out / "steps.csv", timing=args.timing)
    sent = steps[-1].cumulative_bytes if steps else 0
    baseline = pipeline.vanilla_bytes(config, len(dataset.x_train))
    summary = {
        "config": config.to_dict(),
        "steps": len(steps),
        "final_loss": steps[-1].loss if steps else None,
        "final_accuracy": None,
        "total_bytes": sent,
        "vanilla_bytes": baseline,
        "compression_ratio": baseline / sent if sent else None,
        "key_params": res.keys.param_count,
        "socket_bytes_sent": res.bytes_sent,
        "socket_bytes_received": res.bytes_received,
        "features_frame_bytes": res.features_bytes,
        "gradients_frame_bytes": res.gradients_bytes,
    }
    pipeline.write_summary(summary, out / "summary.json")
    _print_summary(args, summary)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = accounting.report_grid(CUTS[args.cut], args.ratios, args.batch, args.kernel)
    C, H, W = CUTS[args.cut]
    doc = {"cut": args.cut, "C": C, "H": H, "W": W, "D": C * H * W, "batch": args.batch,
           "kernel": args.kernel, "rows": [r.to_dict() for r in rows]}
    (_out_dir(args) / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    _emit(args, json.dumps(doc, indent=2) if args.format == "json" else accounting.format_table(rows))
    return EXIT_OK


COMMANDS = {"keygen": cmd_keygen, "bench": cmd_bench, "train": cmd_train,
            "serve-cloud": cmd_serve_cloud, "run-edge": cmd_run_edge, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, ContractViolation) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ProtocolError as exc:
        log.error("protocol error: %s", exc)
        return EXIT_PROTOCOL
    except NumericError as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except C3SLError as exc:
        log.error("%s", exc)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
