"""Student's-t GAN laboratory."""

__version__ = "0.1.0"
