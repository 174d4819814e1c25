"""Torque-controlled character tracking at desk scale.

A reduced-coordinate articulated-body simulator, an RL-trained low-level
motion executor, pluggable high-level target schedulers, and an interactive
session server speaking a line-delimited JSON protocol.
"""

__version__ = "0.1.0"
