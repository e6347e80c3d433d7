"""Optimal stopping solver and verification lab."""
