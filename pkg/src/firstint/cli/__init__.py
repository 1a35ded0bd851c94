"""Command-line interface and definition-file formats."""
from .main import main
from .sysdef import DefinitionError, load_fi, load_system, parse_fi, parse_system

__all__ = ["main", "DefinitionError", "load_fi", "load_system", "parse_fi", "parse_system"]
