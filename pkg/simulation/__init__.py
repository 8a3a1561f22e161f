"""
This module contains everything needed to synthesize a LiDAR-inertial run with exact ground truth: the scenario and its world, the trajectory, the sensor models and the frame simulator.
"""
