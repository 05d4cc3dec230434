"""YCSB-style benchmark driver for the engine."""

from .report import CSV_HEADER, RunReport, emit_report
from .workload import WorkloadSpec, load_database, parse_mix, run_workload
from .zipf import ZipfianGenerator, zipfian_next

__all__ = ["CSV_HEADER", "RunReport", "WorkloadSpec", "ZipfianGenerator", "emit_report",
           "load_database", "parse_mix", "run_workload", "zipfian_next"]
