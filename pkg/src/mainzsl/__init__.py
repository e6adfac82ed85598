"""Meta-learned attribute self-interaction networks for (continual) generalized zero-shot learning."""

__version__ = "0.1.0"
