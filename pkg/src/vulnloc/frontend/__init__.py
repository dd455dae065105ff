from .extract import CandidateKind, SyntaxCandidate, extract_from_source, extract_ssyvcs, load_api_names
from .lexer import SourceToken, TokenKind, render_tokens, tokenize_c
from .parser import AstNode, NodeType, parse_c_unit

__all__ = [
    "AstNode", "CandidateKind", "NodeType", "SourceToken", "SyntaxCandidate", "TokenKind",
    "extract_from_source", "extract_ssyvcs", "load_api_names", "parse_c_unit",
    "render_tokens", "tokenize_c",
]
