"""Adversarial website adaptation: per-website traffic transformers that
pad burst sequences so paired websites become hard to tell apart."""

__version__ = "0.1.0"
