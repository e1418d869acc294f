"""divlab: a toy-ISA laboratory for software diversification and signature evasion."""
from divlab.assembler import format_program, parse_assembly
from divlab.canonical import canonicalize, canonical_match
from divlab.config import DiversityConfig, load_config, parse_config
from divlab.diversifier import diversify, diversify_population
from divlab.encoding import ByteImage, decode, encode
from divlab.errors import DivlabError
from divlab.interpreter import Termination, Trace, interpret

__version__ = "0.1.0"

__all__ = [
    "ByteImage",
    "DiversityConfig",
    "DivlabError",
    "Termination",
    "Trace",
    "canonical_match",
    "canonicalize",
    "decode",
    "diversify",
    "diversify_population",
    "encode",
    "format_program",
    "interpret",
    "load_config",
    "parse_assembly",
    "parse_config",
]
