"""Dyadic sparse domination toolkit."""
from .kernels import BACKEND

__version__ = "0.1.0"
