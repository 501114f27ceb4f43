from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"

    # Reproducibility
    SEED: int = 0

    # Feasibility and certificate tolerances
    FEAS_TOL: float = 1e-6
    STRICT_TOL: float = 1e-9
    PHASE_ONE_TOL: float = 1e-8
    PSD_SHIFT: float = 1e-10
    SUBPROBLEM_TOL: float = 1e-8
    BENCHMARK_TOL: float = 1e-6

    # Splitting engine (linearly constrained QPs)
    SPLITTING_MAX_ITER: int = 200000
    SPLITTING_RELAXATION: float = 1.6
    SPLITTING_RHO: float = 0.1
    SPLITTING_SIGMA: float = 1e-6
    SPLITTING_RHO_RATIO: float = 10.0
    SPLITTING_CHECK_INTERVAL: int = 10
    SPLITTING_POLISH_INTERVAL: int = 25

    # Composite subgradient engine (quadratic pieces)
    FALLBACK_MAX_ITER: int = 50000
    FALLBACK_STEP: float = 0.1
    FALLBACK_STALL_ITER: int = 200

    # Constrained engine (quadratic constraint rows)
    CONSTRAINED_MAX_ITER: int = 500

    # Enumeration oracle
    ORACLE_MAX_SUBSETS: int = 200000

    # Harness
    OUTPUT_DIR: str = "runs"
    JOBS: int = 1

    class Config:
        env_file = ".env"
        env_prefix = "CCP_PENDC_"
        extra = "ignore"


settings = Settings()
