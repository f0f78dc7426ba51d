"""Viewpoint selection for grasp detection in simulated depth views."""
from graspview.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
