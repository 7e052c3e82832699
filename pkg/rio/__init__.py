"""Radar-inertial odometry: simulator, point association, NDT registration, UKF fusion and evaluation."""

__version__ = "0.1.0"
