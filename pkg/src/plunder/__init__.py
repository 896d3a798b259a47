"""EM synthesis of probabilistic programmatic policies from unlabeled demonstrations."""

__version__ = "0.1.0"
