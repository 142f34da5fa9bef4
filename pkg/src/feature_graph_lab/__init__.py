"""Feature Graph Lab - how feature-graph structure shapes GNN learning of pairwise interactions."""

from .cli import main

__all__ = ["main"]
__version__ = "0.1.0"
