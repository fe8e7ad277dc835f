"""Discrete-event simulation of RSU-assisted highway merging over V2X."""

__version__ = "0.1.0"
