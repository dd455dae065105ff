"""Lexer for the C subset understood by the frontend.

Preprocessor directives and comments are skipped. Macro uses survive as
plain identifiers.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List

from ..errors import LexError


class TokenKind(str, Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    OPERATOR = "operator"
    CONSTANT = "constant"
    STRING = "string-literal"
    PUNCTUATION = "punctuation"


KEYWORDS = frozenset("""
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary _Alignas _Alignof _Atomic _Noreturn
    _Static_assert _Thread_local __inline __inline__ __restrict __restrict__
    __const __volatile__ __signed__ __attribute__ __extension__ __asm__ asm
""".split())

PUNCTUATION = frozenset("()[]{};,")

# longest first
OPERATORS = sorted("""
    ... <<= >>= -> ++ -- << >> <= >= == != && || += -= *= /= %= &= ^= |=
    + - * / % & | ^ ! ~ < > = ? : . #
""".split(), key=len, reverse=True)


@dataclass(frozen=True)
class SourceToken:
    text: str
    kind: TokenKind
    file: str
    line: int
    column: int

    @property
    def end_column(self):
        return self.column + len(self.text)


def _is_ident_start(ch):
    return ch.isalpha() or ch == "_" or ch == "$"


def _is_ident_char(ch):
    return ch.isalnum() or ch == "_" or ch == "$"


def tokenize_c(text: str, file_id: str = "<input>") -> List[SourceToken]:
    """Split C source into tokens, dropping comments and directives."""
    tokens: List[SourceToken] = []
    i = 0
    n = len(text)
    line = 1
    col = 1
    at_line_start = True

    def advance(count):
        nonlocal i, line, col
        for _ in range(count):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch == "\n":
            advance(1)
            at_line_start = True
            continue
        if ch in " \t\r\f\v":
            advance(1)
            continue
        if ch == "\\" and i + 1 < n and text[i + 1] == "\n":
            advance(2)
            continue
        if text.startswith("/*", i):
            end = text.find("*/", i + 2)
            if end < 0:
                raise LexError("unterminated comment", line)
            advance(end + 2 - i)
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                if text[i] == "\\" and i + 1 < n and text[i + 1] == "\n":
                    advance(1)
                advance(1)
            continue
        if ch == "#" and at_line_start:
            # directive runs to the end of the (possibly continued) line
            while i < n and text[i] != "\n":
                if text[i] == "\\" and i + 1 < n and text[i + 1] == "\n":
                    advance(1)
                elif text.startswith("/*", i):
                    end = text.find("*/", i + 2)
                    if end < 0:
                        raise LexError("unterminated comment", line)
                    advance(end + 2 - i)
                    continue
                advance(1)
            continue

        at_line_start = False
        start_line, start_col, start = line, col, i

        if _is_ident_start(ch):
            j = i + 1
            while j < n and _is_ident_char(text[j]):
                j += 1
            word = text[i:j]
            # wide/unicode string and char prefixes
            if j < n and text[j] in "\"'" and word in ("L", "u", "U", "u8"):
                j = _scan_quoted(text, j, start_line)
                kind = TokenKind.STRING if text[start + len(word)] == '"' else TokenKind.CONSTANT
            else:
                kind = TokenKind.KEYWORD if word in KEYWORDS else TokenKind.IDENTIFIER
        elif ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = _scan_number(text, i)
            kind = TokenKind.CONSTANT
        elif ch == '"':
            j = _scan_quoted(text, i, start_line)
            kind = TokenKind.STRING
        elif ch == "'":
            j = _scan_quoted(text, i, start_line)
            kind = TokenKind.CONSTANT
        elif ch in PUNCTUATION:
            j = i + 1
            kind = TokenKind.PUNCTUATION
        else:
            for op in OPERATORS:
                if text.startswith(op, i):
                    j = i + len(op)
                    break
            else:
                raise LexError(f"unexpected character {ch!r}", line)
            kind = TokenKind.OPERATOR

        tokens.append(SourceToken(text[start:j], kind, file_id, start_line, start_col))
        advance(j - i)
    return tokens


def _scan_quoted(text, i, line):
    quote = text[i]
    j = i + 1
    n = len(text)
    while j < n:
        c = text[j]
        if c == "\\":
            j += 2
            continue
        if c == quote:
            return j + 1
        if c == "\n":
            break
        j += 1
    what = "string" if quote == '"' else "character constant"
    raise LexError(f"unterminated {what}", line)


def _scan_number(text, i):
    n = len(text)
    j = i
    if text.startswith(("0x", "0X"), i):
        j = i + 2
        while j < n and (text[j].isalnum() or text[j] == "."):
            if text[j] in "pP" and j + 1 < n and text[j + 1] in "+-":
                j += 1
            j += 1
        return j
    while j < n:
        c = text[j]
        if c.isalnum() or c == ".":
            if c in "eE" and j + 1 < n and text[j + 1] in "+-":
                j += 1
            j += 1
        else:
            break
    return j


def render_tokens(tokens) -> str:
    """Lay tokens back out at their recorded line and column."""
    out = []
    line, col = 1, 1
    for tok in tokens:
        if tok.line > line:
            out.append("\n" * (tok.line - line))
            line, col = tok.line, 1
        if tok.column > col:
            out.append(" " * (tok.column - col))
            col = tok.column
        elif tok.column < col and out:
            # overlapping positions cannot happen for lexer output
            out.append(" ")
            col += 1
        out.append(tok.text)
        col += len(tok.text)
    if tokens:
        out.append("\n")
    return "".join(out)
