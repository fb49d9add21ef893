"""Headless charts and attention overlays."""
