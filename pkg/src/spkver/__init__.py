"""Speaker verification toolkit: front-end, augmentation, embedding extractors, CSML backend, fusion and evaluation."""

__version__ = "0.1.0"
