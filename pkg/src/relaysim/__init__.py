"""relaysim: a deterministic simulator of BLE proximity tracing, the relay
attack against it, and a location-bound contact-hash defense."""

from .params import SimParams
from .scenario import ScenarioConfig, ScenarioReport, load_builtin, load_config, run

__version__ = "0.1.0"

__all__ = [
    "SimParams",
    "ScenarioConfig",
    "ScenarioReport",
    "load_builtin",
    "load_config",
    "run",
    "__version__",
]
