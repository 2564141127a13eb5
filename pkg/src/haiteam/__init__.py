"""Human-machine collaborative decision making from logged bandit feedback.

Policies are learned by truncated inverse propensity scoring; a router decides
per instance whether a human expert or the learned policy acts.
"""
__version__ = "0.1.0"
