"""fieldsense: spin-parity interferometry for lattice scalar field theories."""

__version__ = "0.1.0"
