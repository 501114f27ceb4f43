import json
import os

import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import PlanError
from app.models.schemas import BenchmarkPlan, RunRecord, TableFormat
from app.services.benchmark_service import FAILED, MISSING, TABLE_COLUMNS, BenchmarkService
from tests.fixtures.mock_files import write_json, write_text
from tests.fixtures.sample_data import T1_CVAR_SOLUTION, sample_plan


@pytest.fixture
def service():
    return BenchmarkService()


class TestPlanLoading:
    """Integration tests for reading plan files."""

    @pytest.mark.integration
    def test_load_plan(self, service, temp_dir):
        path = write_json(temp_dir, "plan.json", sample_plan(os.path.join(temp_dir, "out")))
        plan = service.load_plan(path)
        assert [entry.id for entry in plan.entries] == ["t1-cvar", "t1-oracle"]

    @pytest.mark.integration
    @pytest.mark.parametrize("content", ["{broken", json.dumps({"entries": [{"id": "x"}]})])
    def test_bad_plan_files(self, service, temp_dir, content):
        path = write_text(temp_dir, "plan.json", content)
        with pytest.raises(PlanError):
            service.load_plan(path)

    @pytest.mark.integration
    def test_unpreparable_instance(self, service, temp_dir):
        plan = BenchmarkPlan.model_validate(sample_plan(
            temp_dir, entries=[{"id": "gone", "instance": {"path": os.path.join(temp_dir, "gone.json")}, "algorithm": "cvar"}],
        ))
        with pytest.raises(PlanError):
            service.run_benchmark(plan)


class TestBenchmarkRuns:
    """Integration tests for running plans and aggregating tables."""

    @pytest.mark.integration
    def test_records_and_table(self, service, temp_dir):
        output = os.path.join(temp_dir, "out")
        result = service.run_benchmark(BenchmarkPlan.model_validate(sample_plan(output)))
        assert not result.interrupted
        assert [r.entry_id for r in result.records] == ["t1-cvar", "t1-oracle"]
        assert list(result.table.columns) == TABLE_COLUMNS
        cvar = result.table.iloc[0]
        assert (cvar["family"], cvar["S"], cvar["algorithm"], cvar["solved"]) == ("t1", 5, "cvar", "1/1")
        assert cvar["fval_mean"] == pytest.approx(-T1_CVAR_SOLUTION, abs=1e-6)
        with open(result.record_paths[0], encoding="utf-8") as f:
            record = RunRecord.model_validate_json(f.read())
        assert record.environment.seed == 0
        assert record.report is not None

    @pytest.mark.integration
    def test_failed_cell_shows_slash(self, service, temp_dir):
        entries = [{
            "id": "short", "instance": {"path": "t1"}, "algorithm": "pendc-l",
            "schedule": {"sigma0": 0.001, "outer_max": 1},
        }]
        result = service.run_benchmark(BenchmarkPlan.model_validate(sample_plan(temp_dir, entries)))
        row = result.table.iloc[0]
        assert row["fval_mean"] == FAILED
        assert row["solved"] == "0/1"

    @pytest.mark.integration
    def test_generated_families_are_seeded(self, service, temp_dir):
        entries = [{
            "id": "norm", "instance": {"family": "norm", "params": {"d": 2, "mcons": 2, "S": 10, "alpha": 0.2}},
            "algorithm": "cvar", "repetitions": 2, "seed_base": 7,
        }]
        plan = BenchmarkPlan.model_validate(sample_plan(temp_dir, entries))
        first = service.run_benchmark(plan)
        second = service.run_benchmark(plan)
        assert [r.environment.seed for r in first.records] == [7, 8]
        assert [r.instance_hash for r in first.records] == [r.instance_hash for r in second.records]
        assert first.records[0].instance_hash != first.records[1].instance_hash
        assert first.table.iloc[0]["solved"] == "2/2"

    @pytest.mark.integration
    def test_parallel_runs_keep_plan_order(self, service, temp_dir):
        plan = BenchmarkPlan.model_validate(sample_plan(temp_dir))
        result = service.run_benchmark(plan, jobs=2)
        assert [r.entry_id for r in result.records] == ["t1-cvar", "t1-oracle"]

    @pytest.mark.integration
    def test_empty_plan(self, service, temp_dir):
        result = service.run_benchmark(BenchmarkPlan.model_validate(sample_plan(temp_dir, entries=[])))
        assert result.records == []
        assert result.table.empty
        assert service.render_table(result.table, TableFormat.TEXT) == " ".join(TABLE_COLUMNS)

    @pytest.mark.integration
    def test_interruption_keeps_finished_records(self, service, temp_dir, mocker):
        original = service.run_entry
        calls = {"count": 0}

        def interrupt_second(run):
            calls["count"] += 1
            if calls["count"] == 2:
                raise KeyboardInterrupt
            return original(run)

        mocker.patch.object(service, "run_entry", side_effect=interrupt_second)
        result = service.run_benchmark(BenchmarkPlan.model_validate(sample_plan(temp_dir)))
        assert result.interrupted
        assert len(result.records) == 1
        missing = result.table.iloc[1]
        assert missing["fval_mean"] == MISSING
        assert missing["solved"] == "0/1"


class TestTableRendering:
    """Integration tests for table output formats."""

    @pytest.mark.integration
    def test_formats(self, service, temp_dir):
        result = service.run_benchmark(BenchmarkPlan.model_validate(sample_plan(temp_dir)))
        text = service.render_table(result.table, TableFormat.TEXT)
        assert "cvar" in text and "1/1" in text
        structured = json.loads(service.render_table(result.table, TableFormat.STRUCTURED, result.records))
        assert len(structured["table"]) == 2
        assert structured["records"][1]["report"]["drop_set"] == [0]
        csv = service.render_table(result.table, TableFormat.CSV)
        assert csv.splitlines()[0] == ",".join(TABLE_COLUMNS)


class TestTransportPlan:
    """Lifted penalty DC against CVaR on seeded transport instances."""

    @pytest.mark.integration
    @pytest.mark.slow
    def test_lifted_never_worse_than_cvar(self, service, temp_dir):
        params = {"n": 2, "m_cust": 2, "S": 12, "alpha": 0.2}
        entries = [
            {"id": f"transport-{alg}", "instance": {"family": "transport", "params": params},
             "algorithm": alg, "repetitions": 5, "seed_base": 0}
            for alg in ("pendc-l", "cvar")
        ]
        result = service.run_benchmark(BenchmarkPlan.model_validate(sample_plan(temp_dir, entries)))
        lifted = {r.repetition: r for r in result.records if r.algorithm.value == "pendc-l"}
        cvar = {r.repetition: r for r in result.records if r.algorithm.value == "cvar"}
        assert result.records[0].S == 12
        compared = 0
        for rep, record in cvar.items():
            if record.report is None or not record.report.status.is_feasible:
                continue
            compared += 1
            assert lifted[rep].instance_hash == record.instance_hash
            assert lifted[rep].report.status.is_feasible
            assert lifted[rep].report.fval <= record.report.fval + 1e-6
        assert compared > 0


class TestBenchmarkDeterminism:
    """Repeated runs of one plan agree on everything except wall time."""

    @pytest.mark.integration
    def test_same_plan_same_table(self, service, temp_dir):
        entries = [
            {"id": "t1-lifted", "instance": {"path": "t1"}, "algorithm": "pendc-l"},
            {"id": "norm-cvar", "instance": {"family": "norm", "params": {"d": 2, "mcons": 2, "S": 8, "alpha": 0.25}},
             "algorithm": "cvar", "repetitions": 2, "seed_base": 3},
        ]
        plan = BenchmarkPlan.model_validate(sample_plan(temp_dir, entries))
        first = service.run_benchmark(plan)
        second = service.run_benchmark(plan)
        pd.testing.assert_frame_equal(
            first.table.drop(columns=["time_mean_s"]),
            second.table.drop(columns=["time_mean_s"]),
        )
        for a, b in zip(first.records, second.records):
            assert a.instance_hash == b.instance_hash
            assert np.array_equal(a.report.x_best, b.report.x_best)
            assert a.report.fval == b.report.fval
