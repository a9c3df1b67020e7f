"""Vulnerability detection on method-level code property graphs."""
from __future__ import annotations

from .errors import (CheckpointError, DataError, DshgtError, FrontendError, GraphError,
                     NumericalError, SchemaError, ShapeError)
from .hetgraph import Cpg, CpgEdge, CpgNode, TypeRegistry, incident_sources
from .method_cpg import MethodCpg, SymbolMap, slice_methods, symbolize

__version__ = "0.1.0"

__all__ = [
    "Cpg", "CpgEdge", "CpgNode", "TypeRegistry", "incident_sources",
    "MethodCpg", "SymbolMap", "slice_methods", "symbolize",
    "DshgtError", "GraphError", "SchemaError", "DataError", "ShapeError", "FrontendError",
    "NumericalError", "CheckpointError",
]
