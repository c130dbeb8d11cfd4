"""State-dependent Lindblad generators with rates of any prescribed sign."""

__version__ = "0.1.0"
