"""Graph embeddings learned by a Wasserstein critic playing against a policy-gradient generator."""

__version__ = "0.1.0"
