"""Neural bloom lighting: tiny CNN bloom-mask generators and a classical bloom baseline."""

__version__ = "0.1.0"
