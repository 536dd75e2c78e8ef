"""Desk-scale cone-beam CT simulation and two-view score-based inpainting of implant traces."""

from .kernels import BACKEND, get_num_threads, set_num_threads

__version__ = "0.1.0"

__all__ = ["BACKEND", "get_num_threads", "set_num_threads", "__version__"]
