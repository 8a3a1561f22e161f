"""
Multi-map LiDAR-inertial mapping: odometry, degeneracy detection, initialization, place recognition, pose graphs and the map database.
"""
