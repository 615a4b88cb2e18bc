"""Test-harness layer: datasets, metrics, verification, benchmarks, CLI."""
