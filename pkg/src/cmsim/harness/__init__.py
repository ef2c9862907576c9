from .checks import CHECKS, CheckResult, run_all
from .config import (ExperimentConfig, SCENARIO_NAMES, SCENARIOS,
                     apply_overrides, from_dict, load_json, make_config,
                     save_json, to_dict, validate)
from .oracles import RenoSender, aimd_reference, reno_pair
from .scenarios import (BUILDERS, RunOutput, run_experiment, run_stats,
                        summarize_trace, write_outputs)

__all__ = [
    "BUILDERS",
    "CHECKS",
    "CheckResult",
    "ExperimentConfig",
    "RenoSender",
    "RunOutput",
    "SCENARIOS",
    "SCENARIO_NAMES",
    "aimd_reference",
    "apply_overrides",
    "from_dict",
    "load_json",
    "make_config",
    "reno_pair",
    "run_all",
    "run_experiment",
    "run_stats",
    "save_json",
    "summarize_trace",
    "to_dict",
    "validate",
    "write_outputs",
]
