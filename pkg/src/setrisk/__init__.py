"""Set-valued risk measures on scenario trees: backward induction of risk
sets, market extensions, and forward extraction of compensating strategies."""

__version__ = "0.1.0"
