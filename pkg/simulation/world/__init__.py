"""
This module contains the shapes a simulated world is made of, and the ray casting against them.
"""
