"""PT-symmetric x^2 (ix)^eps: wedge geometry, complex orbits, shooting spectra."""
__version__ = "0.1.0"
