"""Reasoning workbench for black-box data-transforming procedures over relational data."""

__version__ = "0.1.0"
