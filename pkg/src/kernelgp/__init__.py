"""Genetic programming of symmetric kernels for kernel nearest-neighbour
classification, with co-evolved prototype and fitness-case subsets."""

from .coevolution import CoevoConfig, coevolve, select_final
from .gp_engine import GpConfig
from .kernel_expr import KernelExpr, evaluate, format_expr, parse

__all__ = [
    "CoevoConfig",
    "GpConfig",
    "KernelExpr",
    "coevolve",
    "evaluate",
    "format_expr",
    "parse",
    "select_final",
]
