"""Differentially private adversarial training with membership-inference audits."""

__version__ = "0.1.0"
