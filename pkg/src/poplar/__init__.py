"""Compiler toolchain for an object language with declarative integration
queries: label/protocol/resource/uniqueness checking, plan-based query
resolution, statement splicing, and upgrade-compatibility verification."""

__version__ = "0.1.0"
