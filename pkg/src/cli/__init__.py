"""Command-line interface for EMT"""

from .commands import COMMANDS, dispatch
from .parser import build_parser

__all__ = ['COMMANDS', 'dispatch', 'build_parser']
