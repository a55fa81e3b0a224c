"""Online learning with switching costs under observation budgets."""

__version__ = "0.1.0"
