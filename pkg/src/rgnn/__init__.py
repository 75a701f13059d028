"""Graph neural networks with a non-local TV regularized softmax."""

__version__ = "0.1.0"
