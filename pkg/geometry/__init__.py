"""
This module contains the rigid-body math shared by every other module: rotations, poses, their tangent-space maps and the small symmetric eigendecomposition.
"""
