import logging

from app.commands import emit
from app.core.exceptions import EXIT_INTERNAL, EXIT_OK
from app.models.schemas import TableFormat
from app.services.benchmark_service import benchmark_service

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="Run a benchmark plan")
    parser.add_argument("--plan", required=True, help="Plan file")
    parser.add_argument("--jobs", type=int, default=None, help="Concurrent runs (defaults to JOBS)")
    parser.add_argument("--format", choices=[f.value for f in TableFormat], default=None,
                        help="Table format (overrides the plan)")
    parser.add_argument("--output", default=None, help="Run-record directory (overrides the plan)")
    parser.add_argument("--out", default=None, help="Write the table here instead of stdout")
    parser.set_defaults(handler=run)


def run(args) -> int:
    plan = benchmark_service.load_plan(args.plan)
    updates = {}
    if args.format:
        updates["format"] = TableFormat(args.format)
    if args.output:
        updates["output"] = args.output
    if updates:
        plan = plan.model_copy(update=updates)
    result = benchmark_service.run_benchmark(plan, args.jobs)
    emit(benchmark_service.render_table(result.table, plan.format, result.records), args.out)
    if result.interrupted:
        logger.error(f"benchmark interrupted; {len(result.records)} record(s) kept under {plan.output}")
        return EXIT_INTERNAL
    return EXIT_OK
