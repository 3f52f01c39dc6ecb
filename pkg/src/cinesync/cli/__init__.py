"""Command line, experiment configuration and the on-disk stage layout."""
