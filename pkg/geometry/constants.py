"""
Geometry constants module.
"""

TOLERANCE = 1e-9

# Below this angle (rad), exp/log/Jacobians switch to their Taylor series.
SMALL_ANGLE = 1e-6
