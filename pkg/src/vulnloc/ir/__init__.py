"""LLVM IR ingestion: parsing, linking and line mapping."""

from .link import LinkedModule, StmtRef, group_and_link, map_source_line, same_file
from .parser import IrFunction, IrGlobal, IrModule, IrStatement, Operand, lex_ir, parse_ll, parse_statement

__all__ = [
    "IrFunction", "IrGlobal", "IrModule", "IrStatement", "LinkedModule", "Operand", "StmtRef",
    "group_and_link", "lex_ir", "map_source_line", "parse_ll", "parse_statement", "same_file",
]
