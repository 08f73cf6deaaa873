"""Critic-guided self-play dialogue generation and curriculum fine-tuning orchestration."""

__version__ = "0.1.0"
