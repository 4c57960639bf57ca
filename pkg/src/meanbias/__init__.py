"""Mean-biased balls-into-bins processes: simulation, exact drift oracles and condition audits."""

from .core import ContractViolation, LoadState, format_rational, gap, mean_quantile
from .engine import InitialState, RunResult, SimConfig, reference_run, run, run_repetitions
from .kernels import BACKEND_NAME
from .metrics import PotentialConfig
from .processes import ProcessSpec, SpecError, parse_spec, ranked_probability_vector, step

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "ContractViolation",
    "InitialState",
    "LoadState",
    "PotentialConfig",
    "ProcessSpec",
    "RunResult",
    "SimConfig",
    "SpecError",
    "format_rational",
    "gap",
    "mean_quantile",
    "parse_spec",
    "ranked_probability_vector",
    "reference_run",
    "run",
    "run_repetitions",
    "step",
]
