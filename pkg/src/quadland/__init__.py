"""Ground-based quadrotor landing stack.

Relative 6-DoF state estimation from LED markers seen by a platform
camera, visibility-constrained minimum-jerk landing trajectories, and a
deterministic closed-loop simulation harness.
"""

__version__ = "0.1.0"
