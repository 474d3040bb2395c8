"""Desk-scale simulation of poisoned-model leaderboard climbing attacks and defenses."""

__version__ = "0.1.0"
