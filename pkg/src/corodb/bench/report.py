"""Run reports and their text / CSV / JSON encodings."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

CSV_COLUMNS = ("mode", "workers", "batch_size", "theta", "records", "ops_per_txn",
               "throughput_tps", "mean_latency_us", "p99_latency_us", "abort_rate",
               "resumes", "suspensions")
CSV_HEADER = ",".join(CSV_COLUMNS)


@dataclass
class RunReport:
    mode: str
    workers: int
    batch_size: int
    theta: float
    records: int
    ops_per_txn: int
    throughput_tps: float
    mean_latency_us: float
    p99_latency_us: float
    abort_rate: float
    resumes: int
    suspensions: int
    committed: int = 0
    aborted: int = 0
    attempted: int = 0
    duration_s: float = 0.0
    api: str = "single"
    mix: dict = field(default_factory=dict)
    scheduler: dict = field(default_factory=dict)
    epoch: dict = field(default_factory=dict)
    engine: dict = field(default_factory=dict)
    verify_digest: str = ""

    @property
    def label(self):
        return f"{self.mode}/bs={self.batch_size}"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def _text(r: RunReport) -> str:
    mix = ",".join(f"{k}={v:g}" for k, v in sorted(r.mix.items()))
    lines = [
        f"mode           {r.mode}",
        f"batch size     {r.batch_size}",
        f"workers        {r.workers}",
        f"api            {r.api}",
        f"records        {r.records}",
        f"ops/txn        {r.ops_per_txn}  mix {mix}  theta {r.theta:g}",
        f"throughput     {r.throughput_tps:.1f} txn/s",
        f"latency        mean {r.mean_latency_us:.1f} us, p99 {r.p99_latency_us:.1f} us",
        f"transactions   {r.committed} committed, {r.aborted} aborted "
        f"({r.abort_rate:.2%} aborts) in {r.duration_s:.2f} s",
        f"scheduler      {r.resumes} resumes, {r.suspensions} suspensions, "
        f"{r.scheduler.get('batches', 0)} batches",
    ]
    if r.epoch:
        lines.append(
            f"epochs         {r.epoch.get('enters', 0)} enters, "
            f"{r.epoch.get('epochs_advanced', 0)} advances, "
            f"{r.epoch.get('bytes_retired', 0)} B retired / "
            f"{r.epoch.get('bytes_reclaimed', 0)} B reclaimed")
    if r.verify_digest:
        lines.append(f"verify digest  {r.verify_digest}")
    return "\n".join(lines) + "\n"


def _csv(reports) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        row = asdict(r)
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return out.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def emit_report(report, format="text") -> bytes:
    """Serialize one report (or a list of them) deterministically."""
    reports = report if isinstance(report, (list, tuple)) else [report]
    if format == "text":
        return "\n".join(_text(r) for r in reports).encode()
    if format == "csv":
        return _csv(reports).encode()
    if format == "json":
        payload = [r.to_dict() for r in reports]
        if not isinstance(report, (list, tuple)):
            payload = payload[0]
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode()
    raise ValueError(f"unknown report format {format!r}")
