"""Monte-Carlo simulation, perturbative and recurrent-network surrogate models,
and pulse-level control of a driven qubit subject to random telegraph dephasing.
"""

__version__ = "0.1.0"
