"""Social zones from pedestrian logs, enforced by a barrier-constrained controller."""

__version__ = "0.1.0"

from .geometry import Barrier, Ellipse, Segment, barrier_value  # noqa: F401
from .zonelearn import SocialZone, ZoneModel, build_zone_model  # noqa: F401
from .dynamics import HumanState, RobotState  # noqa: F401
from .controller import MpcConfig, control_step, solve_ocp, build_ocp  # noqa: F401
from .simulator import ScenarioConfig, SimLog, builtin_scenarios, run_scenario  # noqa: F401
