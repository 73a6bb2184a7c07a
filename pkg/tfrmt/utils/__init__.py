"""Utility helpers for TimefrontRMT."""
