from .config import ExperimentConfig, load_config  # noqa: F401
from .env import EnvConfig, PlanarReachEnv  # noqa: F401
from .kinematics import ManipulatorModel, ee_jerk  # noqa: F401
from .smoothness import average_jerk, trajectory_report  # noqa: F401
from .trainer import bc_train, grpo_train  # noqa: F401

# the current version
__version__ = "0.1.0"
