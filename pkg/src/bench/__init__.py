"""Procedural shapes benchmark: scenes, edit suites, metrics and the harness."""
