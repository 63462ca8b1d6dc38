"""Orderless-NADE training and annealed block Gibbs inference for source separation."""

__version__ = "0.1.0"
