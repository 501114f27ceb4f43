from app.commands import emit
from app.core.config import settings
from app.core.exceptions import EXIT_OK, EXIT_OUTCOME
from app.models.schemas import Algorithm
from app.services.instance_service import instance_service
from app.services.solver_service import solver_service


def register(subparsers) -> None:
    parser = subparsers.add_parser("oracle", help="Solve exactly by enumerating drop sets")
    parser.add_argument("--instance", required=True, help="Instance file or reference name (t1, example1)")
    parser.add_argument("--cap", type=int, default=None, help="Maximum number of drop sets (defaults to ORACLE_MAX_SUBSETS)")
    parser.add_argument("--jobs", type=int, default=None, help="Worker threads (defaults to JOBS)")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=run)


def run(args) -> int:
    instance = instance_service.resolve_instance(args.instance)
    report = solver_service.solve(
        instance,
        Algorithm.ORACLE,
        max_subsets=args.cap,
        jobs=args.jobs or settings.JOBS,
    )
    emit(report.model_dump_json(indent=2), args.out)
    return EXIT_OK if report.status.is_feasible else EXIT_OUTCOME
