"""Joint depression classification and explanation generation on a small
from-scratch transformer, with evaluation and baseline tooling."""

__version__ = "0.1.0"
