"""Contact-mode sequence planning with diffusion proposals and particle search."""

from .core import Dataset, DimensionError, DipsError, FingerprintError, Trajectory, TrajectoryScaler
from .diffusion import TrajectoryDiffusion
from .discriminator import TrajectoryDiscriminator, train_discriminator
from .domain import TaskSpec, make_task
from .pipeline import METHODS, MethodConfig, evaluate, execute_task, generate_dataset
from .search import MarkovPrior, SearchConfig, astar_plan
from .trajopt import OptConfig, optimize

__all__ = [
    "Dataset",
    "DimensionError",
    "DipsError",
    "FingerprintError",
    "Trajectory",
    "TrajectoryScaler",
    "TrajectoryDiffusion",
    "TrajectoryDiscriminator",
    "train_discriminator",
    "TaskSpec",
    "make_task",
    "METHODS",
    "MethodConfig",
    "evaluate",
    "execute_task",
    "generate_dataset",
    "MarkovPrior",
    "SearchConfig",
    "astar_plan",
    "OptConfig",
    "optimize",
]
__version__ = "0.1.0"
