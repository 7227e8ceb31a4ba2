"""Learning-based risk-averse MPC for Markov jump linear systems."""

__version__ = "0.1.0"
