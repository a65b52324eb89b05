"""KKT point embedding checks for neuron splitting in homogeneous networks."""
from kktembed._backend import name as backend
from kktembed.net import KinkRule, NetworkSpec, backprop, euler_check, forward
from kktembed.transform import SplitSpec, SplitTransform, apply, build_split, compose

__all__ = [
    "KinkRule",
    "NetworkSpec",
    "SplitSpec",
    "SplitTransform",
    "apply",
    "backend",
    "backprop",
    "build_split",
    "compose",
    "euler_check",
    "forward",
]
__version__ = "0.1.0"
