"""Master-replica teleoperation simulator built around fractal impedance control."""

from .geometry import Pose, Twist, Wrench, compose, integrate_twist, pose_error

__all__ = ["Pose", "Twist", "Wrench", "compose", "integrate_twist", "pose_error"]

__version__ = "0.1.0"
