"""Workload generation, dual-engine runs and reporting."""
