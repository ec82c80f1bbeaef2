"""Model predictive voltage control for MV distribution networks with distributed generation."""

from .grid_model import NetworkModel, load_network, operating_point, to_per_unit
from .mpc import MpcConfig, MpcController
from .oltc_logic import OltcSupervisor
from .plant_sim import PlantConfig, PlantSimulator
from .power_flow import solve
from .qp import ActiveSetSolver, QpProblem, solve_qp
from .scenario import ScenarioSpec, bundled_spec, load_spec, run
from .sysid import ImpulseResponseModel, identify, identify_benchmark

__version__ = "0.1.0"

__all__ = [
    "NetworkModel", "load_network", "operating_point", "to_per_unit",
    "MpcConfig", "MpcController", "OltcSupervisor", "PlantConfig", "PlantSimulator",
    "solve", "ActiveSetSolver", "QpProblem", "solve_qp",
    "ScenarioSpec", "bundled_spec", "load_spec", "run",
    "ImpulseResponseModel", "identify", "identify_benchmark",
]
