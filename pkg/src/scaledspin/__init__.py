"""Scaled dipolar spin dynamics: sequences, echoes, MQC/OTOC and fits."""

__version__ = "0.1.0"
