"""Numerical laboratory for the pathwise law of large numbers of weakly
interacting diffusions and their McKean-Vlasov limit."""

__version__ = "0.1.0"
