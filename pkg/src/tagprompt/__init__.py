"""Text semantics augmented pretraining and prompting on text-attributed graphs."""

__version__ = "0.1.0"
