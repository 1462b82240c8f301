"""Monte Carlo verification of weak and renormalized solutions of the
n-particle Liouville equation, with the particle dynamics that generate them."""

__version__ = "0.1.0"
