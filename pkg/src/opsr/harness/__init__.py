"""Learners, experiment protocol, analysis, reports and the command line."""
