"""Syntax-based candidate extraction for the four characteristic kinds."""

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Tuple

from .lexer import SourceToken, TokenKind, tokenize_c
from .parser import AstNode, NodeType, parse_c_unit


class CandidateKind(str, Enum):
    FC = "FC"  # library/API function call
    AD = "AD"  # array definition
    PD = "PD"  # pointer definition
    AE = "AE"  # arithmetic/assignment expression


_KIND_ORDER = {k: i for i, k in enumerate(CandidateKind)}


@dataclass(frozen=True)
class SyntaxCandidate:
    kind: CandidateKind
    tokens: Tuple[SourceToken, ...]

    @property
    def file(self):
        return self.tokens[0].file

    @property
    def line(self):
        return self.tokens[0].line

    @property
    def column(self):
        return self.tokens[0].column

    @property
    def anchor(self):
        return (self.file, self.line, self.column)

    @property
    def focus(self):
        """Short human form: callee, declared name, or the compact assignment."""
        if self.kind is CandidateKind.AE:
            return "".join(t.text for t in self.tokens)
        return self.tokens[0].text

    @property
    def identifiers(self):
        """Identifier texts referenced by the candidate, callees excluded."""
        names = []
        toks = self.tokens
        for i, tok in enumerate(toks):
            if tok.kind is not TokenKind.IDENTIFIER:
                continue
            if i + 1 < len(toks) and toks[i + 1].text == "(":
                continue
            if i > 0 and toks[i - 1].text in (".", "->"):
                continue
            if tok.text not in names:
                names.append(tok.text)
        return names

    @property
    def text(self):
        return " ".join(t.text for t in self.tokens)

    def sort_key(self):
        return (self.file, self.line, self.column, _KIND_ORDER[self.kind])

    def to_record(self):
        return "\t".join([self.kind.value, self.file, str(self.line), str(self.column), self.text])

    @classmethod
    def from_record(cls, line):
        kind, file_id, lineno, column, text = line.rstrip("\n").split("\t", 4)
        lineno, column = int(lineno), int(column)
        toks = []
        col = column
        for t in tokenize_c(text, file_id):
            # keep the anchor exact; later columns are approximate
            toks.append(SourceToken(t.text, t.kind, file_id, lineno, col))
            col += len(t.text) + 1
        return cls(CandidateKind(kind), tuple(toks))


def load_api_names(path=None) -> frozenset:
    """Read the library/API function-name list (one name per line, '#' comments)."""
    if path is None:
        text = resources.files("vulnloc.data").joinpath("api_names.txt").read_text()
    else:
        text = Path(path).read_text()
    names = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.update(line.split())
    return frozenset(names)


def _is_variable(name, root):
    if name in root.attrs.get("variables", ()):
        return True
    if name in root.attrs.get("functions", ()):
        return False
    # undeclared ALL_CAPS names are treated as macros or enumerators
    return not (name.upper() == name and any(c.isalpha() for c in name))


def _variable_refs(node: AstNode, root: AstNode):
    for sub in node.walk():
        if sub.node_type is NodeType.DECL_REF_EXPR and _is_variable(sub.name, root):
            yield sub


def _span_contains(tokens, text):
    return any(t.text == text for t in tokens)


def extract_ssyvcs(root: AstNode, api_names: Iterable[str]) -> List[SyntaxCandidate]:
    """Collect FC/AD/PD/AE candidates from an AST in document order."""
    api_names = frozenset(api_names)
    toks = root.source
    found = {}

    def add(kind, tokens):
        cand = SyntaxCandidate(kind, tuple(tokens))
        found.setdefault((kind, cand.anchor), cand)

    for node in root.walk():
        if node.node_type is NodeType.CALL_EXPR:
            if node.name in api_names and not node.attrs.get("indirect"):
                if any(True for arg in node.children for _ in _variable_refs(arg, root)):
                    add(CandidateKind.FC, toks[node.start:node.end])
        elif node.node_type is NodeType.VAR_DECLARATION:
            d_start, d_end = node.attrs["declarator"]
            declarator = toks[d_start:d_end]
            name_tok = toks[node.attrs["name_index"]]
            if _span_contains(declarator, "[") and _span_contains(declarator, "]"):
                add(CandidateKind.AD, [name_tok])
            if _span_contains(declarator, "*"):
                add(CandidateKind.PD, [name_tok])
        elif node.node_type is NodeType.ASSIGNMENT_EXPR:
            rhs = node.children[1]
            if next(_variable_refs(rhs, root), None) is not None:
                add(CandidateKind.AE, toks[node.start:node.end])

    return sorted(found.values(), key=SyntaxCandidate.sort_key)


def extract_from_source(text: str, file_id: str, api_names) -> List[SyntaxCandidate]:
    return extract_ssyvcs(parse_c_unit(tokenize_c(text, file_id)), api_names)
