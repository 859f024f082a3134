"""Reinforcement-learning trading stack for continuous intraday electricity markets."""

__version__ = "0.1.0"

EPISODE_LENGTH = 211
"""Number of minute steps in one product episode."""

TRANSACTION_FEE = 0.2
"""Default fee in EUR per traded MWh."""
