"""Benchmark runner: plans in, run records and metric tables out."""
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Tuple

import pandas as pd
from pydantic import ValidationError

from app import __version__
from app.core.config import settings
from app.core.exceptions import EngineError, InstanceParseError, InstanceValidationError, OutcomeError, PlanError
from app.models.instance import ProblemInstance
from app.models.schemas import BenchmarkPlan, EnvironmentStamp, PlanEntry, RunRecord, TableFormat
from app.services.generator_service import generate_instance
from app.services.instance_service import canonical_hash, instance_service
from app.services.solver_service import solver_service

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["family", "S", "alpha", "algorithm", "fval_mean", "time_mean_s", "prob_mean", "solved"]
FAILED = "/"
MISSING = "-"


@dataclass
class BenchmarkResult:
    records: List[RunRecord]
    table: pd.DataFrame
    interrupted: bool = False
    record_paths: List[str] = field(default_factory=list)


@dataclass
class _Run:
    entry: PlanEntry
    repetition: int
    seed: int
    family: str
    instance: ProblemInstance


class BenchmarkService:
    def load_plan(self, path: str) -> BenchmarkPlan:
        if not os.path.isfile(path):
            raise PlanError(f"plan file not found: {path}", {"path": path})
        try:
            raw = json.loads(instance_service.read_text(path))
            return BenchmarkPlan.model_validate(raw)
        except json.JSONDecodeError as e:
            raise PlanError(f"malformed plan file {path}: {e}", {"path": path}) from e
        except ValidationError as e:
            raise PlanError(
                f"plan file {path} is invalid",
                {"path": path, "errors": [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]},
            ) from e

    def _seed(self, entry: PlanEntry, repetition: int) -> int:
        base = settings.SEED if entry.seed_base is None else entry.seed_base
        return base + repetition

    def _prepare(self, plan: BenchmarkPlan) -> List[_Run]:
        """Materialize every (entry, repetition) instance before any solve runs."""
        runs = []
        for entry in plan.entries:
            source = entry.instance
            loaded = None
            for rep in range(entry.repetitions):
                seed = self._seed(entry, rep)
                try:
                    if source.family is not None:
                        instance = generate_instance(source.family, source.params, seed)
                        family = source.family.value
                    else:
                        loaded = loaded or instance_service.resolve_instance(source.path)
                        instance = loaded
                        family = instance.name
                except (InstanceParseError, InstanceValidationError, ValueError) as e:
                    raise PlanError(f"entry '{entry.id}': instance could not be prepared: {e}", {"entry": entry.id}) from e
                runs.append(_Run(entry=entry, repetition=rep, seed=seed, family=family, instance=instance))
        return runs

    def run_entry(self, run: _Run) -> RunRecord:
        entry = run.entry
        report, error = None, None
        family = entry.instance.family if entry.instance.family is not None else None
        try:
            report = solver_service.solve(
                run.instance, entry.algorithm, schedule=entry.schedule, family=family,
            )
        except (OutcomeError, EngineError) as e:
            error = e.message
            logger.warning(f"entry '{entry.id}' rep {run.repetition}: {e.message}")
        return RunRecord(
            entry_id=entry.id,
            repetition=run.repetition,
            family=run.family,
            S=run.instance.S,
            alpha=run.instance.alpha,
            algorithm=entry.algorithm,
            report=report,
            error=error,
            environment=EnvironmentStamp(version=__version__, seed=run.seed, timestamp=datetime.now(timezone.utc)),
            instance_hash=canonical_hash(run.instance),
        )

    def write_record(self, record: RunRecord, output: str) -> str:
        # re-validating enforces the report invariants on what is persisted
        checked = RunRecord.model_validate(record.model_dump())
        path = os.path.join(output, f"{record.entry_id}-rep{record.repetition}.json")
        instance_service.write_text(path, checked.model_dump_json(indent=2))
        return path

    def run_benchmark(self, plan: BenchmarkPlan, jobs: int = None) -> BenchmarkResult:
        jobs = jobs or settings.JOBS
        if jobs < 1:
            raise PlanError(f"jobs must be at least 1, got {jobs}")
        runs = self._prepare(plan)
        logger.info(f"Benchmark: {len(plan.entries)} entries, {len(runs)} runs, jobs={jobs}, output={plan.output}")
        results: Dict[Tuple[str, int], RunRecord] = {}
        paths: List[str] = []
        interrupted = False

        def finish(record: RunRecord) -> None:
            results[(record.entry_id, record.repetition)] = record
            paths.append(self.write_record(record, plan.output))

        try:
            if jobs == 1:
                for run in runs:
                    finish(self.run_entry(run))
            else:
                executor = ThreadPoolExecutor(max_workers=jobs)
                try:
                    futures = [executor.submit(self.run_entry, run) for run in runs]
                    for future in as_completed(futures):
                        finish(future.result())
                finally:
                    executor.shutdown(wait=True, cancel_futures=True)
        except KeyboardInterrupt:
            interrupted = True
            logger.warning(f"Benchmark interrupted: {len(results)} of {len(runs)} runs recorded")

        # records keep plan order regardless of completion order
        records = [results[(r.entry.id, r.repetition)] for r in runs if (r.entry.id, r.repetition) in results]
        table = self.build_table(records, runs)
        return BenchmarkResult(records=records, table=table, interrupted=interrupted, record_paths=paths)

    def build_table(self, records: List[RunRecord], runs: List[_Run] = None) -> pd.DataFrame:
        """One row per (family, S, alpha, algorithm) cell, in plan order."""
        rows = [
            {
                "family": r.family,
                "S": r.S,
                "alpha": r.alpha,
                "algorithm": r.algorithm.value,
                "fval": r.report.fval if r.report is not None and r.report.fval is not None else math.nan,
                "time": r.report.wall_time if r.report is not None else math.nan,
                "prob": r.report.empirical_prob if r.report is not None else math.nan,
                "solved": r.solved,
            }
            for r in records
        ]
        keys = ["family", "S", "alpha", "algorithm"]
        expected = pd.DataFrame(
            [
                {"family": r.family, "S": r.instance.S, "alpha": r.instance.alpha, "algorithm": r.entry.algorithm.value}
                for r in runs or []
            ],
            columns=keys,
        )
        frame = pd.DataFrame(rows, columns=keys + ["fval", "time", "prob", "solved"])
        counts = expected.groupby(keys, sort=False).size() if not expected.empty else frame.groupby(keys, sort=False).size()
        if counts.empty:
            return pd.DataFrame(columns=TABLE_COLUMNS)

        grouped = dict(list(frame.groupby(keys, sort=False))) if not frame.empty else {}
        table_rows = []
        for key, total in counts.items():
            cell = grouped.get(key)
            row = dict(zip(keys, key))
            if cell is None:
                row.update(fval_mean=MISSING, time_mean_s=MISSING, prob_mean=MISSING, solved=f"0/{total}")
            else:
                solved = int(cell["solved"].sum())
                all_solved = solved == len(cell)
                row.update(
                    fval_mean=float(cell["fval"].mean()) if all_solved else FAILED,
                    time_mean_s=float(cell["time"].mean()) if cell["time"].notna().any() else FAILED,
                    prob_mean=float(cell["prob"].mean()) if cell["prob"].notna().any() else FAILED,
                    solved=f"{solved}/{total}",
                )
            table_rows.append(row)
        return pd.DataFrame(table_rows, columns=TABLE_COLUMNS)

    def render_table(self, table: pd.DataFrame, fmt: TableFormat, records: List[RunRecord] = None) -> str:
        fmt = TableFormat(fmt)
        if fmt == TableFormat.CSV:
            return table.to_csv(index=False)
        if fmt == TableFormat.STRUCTURED:
            return json.dumps(
                {
                    "table": table.to_dict(orient="records"),
                    "records": [r.model_dump(mode="json") for r in records or []],
                },
                indent=2,
            )
        if table.empty:
            return " ".join(TABLE_COLUMNS)
        formatters = {
            "fval_mean": lambda v: v if isinstance(v, str) else f"{v:.6g}",
            "time_mean_s": lambda v: v if isinstance(v, str) else f"{v:.3f}",
            "prob_mean": lambda v: v if isinstance(v, str) else f"{v:.4g}",
            "alpha": lambda v: f"{v:g}",
        }
        return table.to_string(index=False, formatters=formatters)


# Global instance
benchmark_service = BenchmarkService()


def run_benchmark(plan: BenchmarkPlan, jobs: int = None) -> BenchmarkResult:
    return benchmark_service.run_benchmark(plan, jobs)
