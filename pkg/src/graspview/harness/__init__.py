"""Corpus generation, configuration, experiment pipelines, reports and the CLI."""
