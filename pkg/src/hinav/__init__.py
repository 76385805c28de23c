"""Hierarchical visual navigation: a graph-trained high-level policy over a learned forward controller."""
__version__ = "0.1.0"
