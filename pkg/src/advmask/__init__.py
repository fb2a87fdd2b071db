"""Adversarially learned masking for masked-language-model domain adaptation."""

__version__ = "0.1.0"
