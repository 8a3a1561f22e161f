"""
Unittest test module.
"""