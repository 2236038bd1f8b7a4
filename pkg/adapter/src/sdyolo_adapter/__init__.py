"""Image-generation evaluator backend speaking the pareto-tuner line protocol."""

__version__ = "0.1.0"
