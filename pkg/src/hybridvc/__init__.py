"""Block-based hybrid video codec with learned in-loop filtering and
block adaptive resolution coding."""

__version__ = "0.1.0"
