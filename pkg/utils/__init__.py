"""Utility modules: key-value run files and the markdown run log."""
