"""Teleoperated pick-and-place simulator with rendered force feedback and a
behavioral-cloning pipeline."""

__version__ = "0.1.0"

from .haptics import FeedbackCondition
from .kinematics import GripperKind

__all__ = ["FeedbackCondition", "GripperKind", "__version__"]
