"""Bundled material and crystal configuration files."""
