"""
Runs scenarios through the mapping pipeline and evaluates the results.
"""
