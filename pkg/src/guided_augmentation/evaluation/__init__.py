"""Downstream evaluation: classifiers, metrics, baselines and experiment protocols."""
