"""``corodb-bench`` command line entry point."""

import argparse
import logging
import sys

from ..errors import CoroDBError, UsageError
from ..suspend import Mode
from .report import emit_report
from .workload import WorkloadSpec, load_database, parse_mix, run_workload


def build_parser():
    p = argparse.ArgumentParser(prog="corodb-bench",
                                description="Run a YCSB-style workload against the engine.")
    p.add_argument("--records", type=int, default=1_000_000)
    p.add_argument("--key-len", type=int, default=8)
    p.add_argument("--val-len", type=int, default=8)
    p.add_argument("--ops-per-txn", type=int, default=10)
    p.add_argument("--mix", default="read=1.0", help="e.g. read=0.8,rmw=0.2")
    p.add_argument("--scan-len", type=int, default=100)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.TWO_LEVEL.value)
    p.add_argument("--api", choices=["single", "multi-get"], default="single")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.add_argument("--verify", action="store_true",
                   help="record read results and print their digest")
    p.add_argument("--txns", type=int, default=0,
                   help="stop each worker after this many transactions (0: use --duration)")
    p.add_argument("--retries", type=int, default=0, help="re-run aborted transactions up to N times")
    p.add_argument("--log-dir", default=None, help="write per-worker log files here")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = WorkloadSpec(
            records=args.records, key_len=args.key_len, val_len=args.val_len,
            ops_per_txn=args.ops_per_txn, mix=parse_mix(args.mix), scan_len=args.scan_len,
            theta=args.theta, api=args.api, duration=args.duration if not args.txns else 0,
            workers=args.workers, mode=Mode(args.mode), batch_size=args.batch_size,
            seed=args.seed, txns=args.txns, retries=args.retries, verify=args.verify,
            log_dir=args.log_dir)
        engine, table = load_database(spec)
        report = run_workload(engine, spec, table)
        for w in engine.workers:
            w.sink.close()
    except UsageError as exc:
        print(f"corodb-bench: error: {exc}", file=sys.stderr)
        return 2
    except (CoroDBError, ValueError) as exc:
        print(f"corodb-bench: {exc}", file=sys.stderr)
        return 1
    sys.stdout.buffer.write(emit_report(report, args.format))
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
