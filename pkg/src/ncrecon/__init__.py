"""Non-Cartesian MRI reconstruction with dual-domain self-supervised training."""

__version__ = "0.1.0"
