import logging

from app.commands import emit, parse_vector
from app.core.exceptions import EXIT_OK, EXIT_OUTCOME
from app.models.schemas import Algorithm, Family
from app.services.instance_service import instance_service
from app.services.solver_service import solver_service

logger = logging.getLogger(__name__)

SOLVE_ALGORITHMS = [a.value for a in Algorithm if a != Algorithm.ORACLE]


def add_schedule_arguments(parser) -> None:
    group = parser.add_argument_group("penalty schedule")
    group.add_argument("--sigma0", type=float, default=None)
    group.add_argument("--beta", type=float, default=None)
    group.add_argument("--rho", type=float, default=None)
    group.add_argument("--inner-rel-tol", type=float, default=None)
    group.add_argument("--outer-max", type=int, default=None)
    group.add_argument("--inner-max", type=int, default=None)
    group.add_argument("--feas-tol", type=float, default=None)
    group.add_argument("--subproblem-tol", type=float, default=None)
    group.add_argument("--record-iterates", action="store_true", default=None)
    group.add_argument("--random-start", action="store_true", default=None)
    group.add_argument("--start-seed", dest="seed", type=int, default=None)


def schedule_overrides(args) -> dict:
    names = (
        "sigma0", "beta", "rho", "inner_rel_tol", "outer_max", "inner_max",
        "feas_tol", "subproblem_tol", "record_iterates", "random_start", "seed",
    )
    return {name: getattr(args, name) for name in names if getattr(args, name) is not None}


def register(subparsers) -> None:
    parser = subparsers.add_parser("solve", help="Run a solver on an instance")
    parser.add_argument("--instance", required=True, help="Instance file or reference name (t1, example1)")
    parser.add_argument("--alg", required=True, choices=SOLVE_ALGORITHMS)
    parser.add_argument("--family", choices=[f.value for f in Family], default=None,
                        help="Use this family's schedule defaults")
    parser.add_argument("--x0", default=None, help="Starting point (pendc-p, dca)")
    parser.add_argument("--z0", default=None, help="Starting selector (pendc-l)")
    add_schedule_arguments(parser)
    parser.add_argument("--out", default=None, help="Write the report here instead of stdout")
    parser.set_defaults(handler=run)


def run(args) -> int:
    instance = instance_service.resolve_instance(args.instance)
    report = solver_service.solve(
        instance,
        args.alg,
        schedule=schedule_overrides(args),
        family=Family(args.family) if args.family else None,
        x0=parse_vector(args.x0),
        z0=parse_vector(args.z0),
    )
    emit(report.model_dump_json(indent=2), args.out)
    if not report.status.is_feasible:
        logger.warning(f"{args.alg} finished with status {report.status.value}: {report.message}")
        return EXIT_OUTCOME
    return EXIT_OK
