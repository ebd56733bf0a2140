"""Activity recognition from tri-axial accelerometer streams.

Six everyday activities are classified by a from-scratch differentiable
1-D residual network; predictions are smoothed by a covering-window vote,
grouped into gait / non-gait, aggregated into ambulatory bouts, and
compared across subject groups with the Mann-Whitney U test.
"""

from .dataio import ActivityLabel, Recording
from .model import HarModelConfig
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = ["ActivityLabel", "Recording", "HarModelConfig", "TrainConfig",
           "__version__"]
