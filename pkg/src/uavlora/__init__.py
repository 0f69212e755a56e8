"""UAV-mounted LoRa gateways: channel, association and energy models, a multi-agent
environment, a small autodiff library and a recurrent MAPPO trainer."""

from .config import EnvConfig, PpoConfig, RunConfig
from .env import LoraUavEnv
from .mappo import MappoTrainer, TrainingReport, ippo_variant, train

__version__ = "0.1.0"

__all__ = [
    "EnvConfig",
    "PpoConfig",
    "RunConfig",
    "LoraUavEnv",
    "MappoTrainer",
    "TrainingReport",
    "ippo_variant",
    "train",
]
