"""Deterministic indoor-localization sandbox.

Synthetic corridor worlds, three position estimators (Wi-Fi RSSI
fingerprinting with a small MLP, LiDAR/IMU scan matching, and an EKF fusing
the two), plus the evaluation harness that compares them.  Every stage is
seedable and reruns are byte-identical.
"""

__version__ = "0.1.0"
