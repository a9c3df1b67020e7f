"""Source-to-CPG frontends: the mini-C parser and the JSON interchange format."""
from .builder import parse_directory, parse_sources
from .cpgjson import VERSION, export_cpg, import_cpg, read_cpg, write_cpg

__all__ = [
    "VERSION",
    "export_cpg",
    "import_cpg",
    "parse_directory",
    "parse_sources",
    "read_cpg",
    "write_cpg",
]
