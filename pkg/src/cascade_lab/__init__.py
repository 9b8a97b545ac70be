"""Energy cascades for time-periodic perturbations of the harmonic oscillator."""

__version__ = "0.1.0"
