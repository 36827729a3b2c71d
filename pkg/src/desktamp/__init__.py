"""Planar task-and-motion planning with gated teleoperation handoffs.

A desk-scale testbed: a 3-link planar arm manipulates polygonal objects,
a hybrid symbolic/geometric planner sequences pick/move/attach actions,
and precise attachment segments are delegated to an operator (scripted
oracle, learned policy, or remote human over a websocket). Demonstrations
collected this way bootstrap the planner's constraint sets and train
imitation policies; a fleet layer queues many sessions onto one operator.
"""

__version__ = "0.1.0"
