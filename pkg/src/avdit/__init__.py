"""Joint audio-video diffusion transformer built on a frozen image DiT, at desk scale."""

from .config import RunConfig, load as load_config
from .model import AVDiT, ModelConfig, build_model

__all__ = ["AVDiT", "ModelConfig", "RunConfig", "build_model", "load_config"]
__version__ = "0.1.0"
