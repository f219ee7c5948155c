"""Cell line drug sensitivity modeling: per-drug model selection and drug recommendation."""

__version__ = "0.1.0"
