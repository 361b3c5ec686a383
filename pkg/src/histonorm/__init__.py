"""Stain normalization and tissue classification for H&E histology."""
