"""Command line, configuration and the experiment suite."""
