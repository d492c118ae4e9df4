"""Inductive relation prediction with relational-path contrast and rule extraction."""
from .kg import InductiveSplit, KnowledgeGraph, Triple, load_split, load_triples
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "InductiveSplit",
    "KnowledgeGraph",
    "Triple",
    "load_split",
    "load_triples",
]
