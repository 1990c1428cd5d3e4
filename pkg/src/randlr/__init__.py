"""Randomized low-rank approximation: generalized Nystrom and friends."""

from .decomp import (
    Approximant,
    Method,
    apply,
    approximate,
    gn_fallback,
    gn_plain,
    gn_stabilized,
    hmt,
    materialize,
    nystrom_hmt,
    nystrom_psd,
    subspace_iteration,
)
from .sketch import SketchKind, SketchSpec, generate
from .stability import CorePath, EpsilonPolicy

__version__ = "0.1.0"

__all__ = [
    "Approximant",
    "Method",
    "apply",
    "approximate",
    "gn_fallback",
    "gn_plain",
    "gn_stabilized",
    "hmt",
    "materialize",
    "nystrom_hmt",
    "nystrom_psd",
    "subspace_iteration",
    "SketchKind",
    "SketchSpec",
    "generate",
    "CorePath",
    "EpsilonPolicy",
]
