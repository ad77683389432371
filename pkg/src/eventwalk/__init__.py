"""Marked event sequences over hidden relation networks: simulation,
random-walk generation, adversarial imitation training, and evaluation."""

__version__ = "0.1.0"
