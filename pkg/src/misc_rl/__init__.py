"""Mutual-information state control for off-policy RL."""
