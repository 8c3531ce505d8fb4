"""Machine unlearning for constrained models via KKT sensitivity."""
__version__ = "0.1.0"
