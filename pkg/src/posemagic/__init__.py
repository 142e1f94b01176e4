"""Hybrid selective-SSM / graph-convolution lifter from 2D keypoint sequences to 3D poses."""

from .graph import Skeleton, default_skeleton, load_skeleton
from .model import ModelConfig, PoseMagicModel, count_params, reference_config, tiny_config
from .ssm import ConfigError

__version__ = "0.1.0"
