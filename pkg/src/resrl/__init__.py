"""Semi-gradient, residual-gradient and residual-algorithm learners for
policy evaluation and continuous control, with exact finite-MDP oracles."""

__version__ = "0.1.0"
