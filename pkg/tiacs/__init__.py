"""Time-integrated accessibility (TI-acs) of EV charging along individual trajectories."""

__version__ = "0.1.0"
