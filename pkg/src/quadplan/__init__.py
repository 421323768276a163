"""Learned centroidal planning for a desk-scale quadruped."""

__version__ = "0.1.0"
