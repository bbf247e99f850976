"""Reach-avoid certification and simulation for sampled-data control systems."""

from .expr import differentiate, evaluate, parse, to_string
from .model import SystemSpec, load_spec

__all__ = ["SystemSpec", "differentiate", "evaluate", "load_spec", "parse", "to_string"]
__version__ = "0.1.0"
