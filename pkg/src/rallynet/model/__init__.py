from .config import ModelConfig
from .policy import RallyNetPolicy, PolicyAgent

__all__ = ["ModelConfig", "RallyNetPolicy", "PolicyAgent"]
