"""Toy multimodal transformer with visual token compression and cross-modal attention inhibition."""

from .config import CmaiConfig, ModelConfig, config_from_dict, load_config
from .pipeline import RunReport, decode, encode_image, generate_greedy, project, run_pipeline
from .vmtc import KMeansConfig, VmtcConfig
from .weights import Weights, init_weights, load_weights, save_weights

__version__ = "0.1.0"
