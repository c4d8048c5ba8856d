"""Experiment registry, desk pipeline, suites and report rendering."""
