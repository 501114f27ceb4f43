import logging

from app.commands import default_output_path, emit
from app.core.config import settings
from app.core.exceptions import EXIT_OK, UsageError
from app.models.schemas import FAMILY_PARAMS, Family
from app.services.generator_service import REFERENCE_INSTANCES, generate_instance, reference_instance
from app.services.instance_service import instance_service

logger = logging.getLogger(__name__)

# flag -> parameter name, shared across families
PARAM_FLAGS = {
    "d": int,
    "mcons": int,
    "theta": float,
    "S": int,
    "alpha": float,
    "upper": float,
    "n": int,
    "m_cust": int,
    "demand_loc": float,
    "demand_scale": float,
    "cost_low": float,
    "cost_high": float,
    "capacity_factor": float,
    "gamma": float,
    "target": float,
    "n_factors": int,
    "returns_csv": str,
}


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen", help="Generate an instance file")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--family", choices=[f.value for f in Family])
    source.add_argument("--reference", choices=list(REFERENCE_INSTANCES))
    for name, kind in PARAM_FLAGS.items():
        flag = name if name == "S" else name.replace("_", "-")
        parser.add_argument(f"--{flag}", dest=name, type=kind, default=None)
    parser.add_argument("--seed", type=int, default=None, help="Defaults to SEED")
    parser.add_argument("--out", default=None, help="Output path (defaults to OUTPUT_DIR/<name>.json)")
    parser.set_defaults(handler=run)


def family_params(family: Family, args) -> dict:
    fields = FAMILY_PARAMS[family].model_fields
    given = {name: getattr(args, name) for name in PARAM_FLAGS if getattr(args, name) is not None}
    foreign = sorted(set(given) - set(fields))
    if foreign:
        raise UsageError(f"parameters not used by family '{family.value}': {', '.join(foreign)}")
    return given


def run(args) -> int:
    if args.reference:
        instance = reference_instance(args.reference)
    else:
        family = Family(args.family)
        seed = settings.SEED if args.seed is None else args.seed
        instance = generate_instance(family, family_params(family, args), seed)
    path = args.out or default_output_path(instance.name, settings.OUTPUT_DIR)
    instance_service.save_instance(instance, path)
    emit(path)
    return EXIT_OK
