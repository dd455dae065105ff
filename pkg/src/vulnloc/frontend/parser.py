"""Error-tolerant shallow parser for a C subset.

Only function definitions, variable declarations, calls, assignments and
identifier references get dedicated node types. Everything else is an
``other`` node whose span is still exact, so spans nest cleanly.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from ..errors import ParseError
from .lexer import SourceToken, TokenKind


class NodeType(str, Enum):
    TRANSLATION_UNIT = "translation-unit"
    FUNCTION_DEF = "function-def"
    VAR_DECLARATION = "var-declaration"
    CALL_EXPR = "call-expr"
    ASSIGNMENT_EXPR = "assignment-expr"
    DECL_REF_EXPR = "decl-ref-expr"
    OTHER = "other"


@dataclass(eq=False)
class AstNode:
    node_type: NodeType
    start: int
    end: int
    children: List["AstNode"] = field(default_factory=list)
    name: Optional[str] = None
    attrs: dict = field(default_factory=dict)
    source: List[SourceToken] = field(default_factory=list, repr=False)

    @property
    def tokens(self):
        return self.source[self.start:self.end]

    @property
    def text(self):
        return " ".join(t.text for t in self.tokens)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<{self.node_type.value}{label} [{self.start}:{self.end}]>"


TYPE_KEYWORDS = frozenset("""
    void char short int long float double signed unsigned _Bool _Complex
    struct union enum const volatile restrict static extern register auto
    inline typedef _Atomic _Noreturn _Thread_local __inline __inline__
    __restrict __restrict__ __const __signed__ __extension__ __attribute__
    _Alignas
""".split())

# typedef names that commonly come from system headers we never see
KNOWN_TYPEDEFS = frozenset("""
    size_t ssize_t wchar_t FILE ptrdiff_t intptr_t uintptr_t off_t time_t
    pid_t va_list BOOL DWORD WORD BYTE HANDLE SOCKET LPSTR LPWSTR LPCSTR
    LPCWSTR TCHAR errno_t socklen_t fd_set jmp_buf sig_atomic_t clock_t
""".split())

ASSIGN_OPS = frozenset("= += -= *= /= %= &= ^= |= <<= >>=".split())

BINARY_PRECEDENCE = {
    "||": 4, "&&": 5, "|": 6, "^": 7, "&": 8,
    "==": 9, "!=": 9, "<": 10, ">": 10, "<=": 10, ">=": 10,
    "<<": 11, ">>": 11, "+": 12, "-": 12, "*": 13, "/": 13, "%": 13,
}

PREFIX_OPS = frozenset("& * + - ~ ! ++ --".split())

_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}


def check_balance(tokens):
    stack = []
    for tok in tokens:
        if tok.kind is not TokenKind.PUNCTUATION:
            continue
        if tok.text in _OPENERS:
            stack.append(tok)
        elif tok.text in _CLOSERS:
            if not stack or stack[-1].text != _CLOSERS[tok.text]:
                raise ParseError(f"unbalanced {tok.text!r}", tok.line, tok.column)
            stack.pop()
    if stack:
        tok = stack[-1]
        raise ParseError(f"unclosed {tok.text!r}", tok.line, tok.column)


class _Recover(Exception):
    pass


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.pos = 0
        self.typedefs = set(KNOWN_TYPEDEFS)
        self.variables = set()
        self.functions = set()
        self.matching = {}
        stack = []
        for i, tok in enumerate(tokens):
            if tok.kind is TokenKind.PUNCTUATION:
                if tok.text in _OPENERS:
                    stack.append(i)
                elif tok.text in _CLOSERS:
                    self.matching[stack.pop()] = i

    # token helpers

    def peek(self, offset=0):
        i = self.pos + offset
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text, offset=0):
        tok = self.peek(offset)
        return tok is not None and tok.text == text and tok.kind is not TokenKind.STRING

    def expect(self, text):
        tok = self.peek()
        if tok is None or tok.text != text:
            raise _Recover()
        self.pos += 1
        return tok

    def node(self, node_type, start, children=(), name=None, **attrs):
        return AstNode(node_type, start, self.pos, list(children), name, dict(attrs), self.toks)

    def skip_group(self):
        """Skip a bracketed group starting at the current opener."""
        self.pos = self.matching[self.pos] + 1

    def is_type_name(self, tok):
        if tok is None:
            return False
        if tok.kind is TokenKind.KEYWORD:
            return tok.text in TYPE_KEYWORDS
        if tok.kind is TokenKind.IDENTIFIER:
            return tok.text in self.typedefs or (tok.text.endswith("_t") and len(tok.text) > 2)
        return False

    # top level

    def parse_unit(self):
        children = []
        while self.pos < len(self.toks):
            start = self.pos
            try:
                children.append(self.external_declaration())
            except _Recover:
                self.pos = start
                children.append(self.recover_statement(start))
        root = AstNode(NodeType.TRANSLATION_UNIT, 0, len(self.toks), children, None, {}, self.toks)
        root.attrs["variables"] = frozenset(self.variables)
        root.attrs["functions"] = frozenset(self.functions)
        root.attrs["typedefs"] = frozenset(self.typedefs)
        return root

    def external_declaration(self):
        start = self.pos
        if self.at(";"):
            self.pos += 1
            return self.node(NodeType.OTHER, start)
        is_typedef = self.parse_specifiers()
        if self.at(";"):
            self.pos += 1
            return self.node(NodeType.OTHER, start)
        decl_start = self.pos
        name, is_function, params = self.parse_declarator()
        if is_function and (self.at("{") or self._kr_params_follow()):
            while not self.at("{"):
                if self.peek() is None:
                    raise _Recover()
                self.pos += 1
            self.functions.add(name)
            for p in params:
                self.variables.add(p)
            body = self.compound()
            return self.node(NodeType.FUNCTION_DEF, start, [body], name=name)
        self.pos = decl_start
        children = self.init_declarators(is_typedef)
        self.expect(";")
        return self.node(NodeType.OTHER, start, children, role="declaration")

    def _kr_params_follow(self):
        # old-style parameter declarations between ')' and '{'
        tok = self.peek()
        return tok is not None and self.is_type_name(tok)

    def parse_specifiers(self):
        is_typedef = False
        seen_type = False
        while True:
            tok = self.peek()
            if tok is None:
                raise _Recover()
            if tok.text in ("struct", "union", "enum") and tok.kind is TokenKind.KEYWORD:
                self.pos += 1
                if self.peek() is not None and self.peek().kind is TokenKind.IDENTIFIER:
                    self.pos += 1
                if self.at("{"):
                    self.skip_group()
                seen_type = True
                continue
            if tok.text in ("__attribute__", "_Alignas", "__declspec") and self.at("(", 1):
                self.pos += 1
                self.skip_group()
                continue
            if tok.kind is TokenKind.KEYWORD and tok.text in TYPE_KEYWORDS:
                if tok.text == "typedef":
                    is_typedef = True
                if tok.text not in ("const", "volatile", "static", "extern", "register",
                                    "auto", "inline", "typedef", "restrict"):
                    seen_type = True
                self.pos += 1
                continue
            if tok.kind is TokenKind.IDENTIFIER and not seen_type:
                nxt = self.peek(1)
                if tok.text in self.typedefs or (
                    nxt is not None
                    and (nxt.kind is TokenKind.IDENTIFIER or nxt.text == "*" or nxt.text == "(")
                    and self._plausible_type_ident()
                ):
                    seen_type = True
                    self.pos += 1
                    continue
            break
        if not seen_type and self.pos < len(self.toks) and not is_typedef:
            # implicit int is not supported at file scope
            tok = self.peek()
            if tok is None or tok.kind is not TokenKind.IDENTIFIER:
                raise _Recover()
        return is_typedef

    def _plausible_type_ident(self):
        # "T x", "T *x", "T (*x)" read as a declaration with unknown typedef T
        j = self.pos + 1
        while j < len(self.toks) and self.toks[j].text in ("*", "const", "volatile", "restrict"):
            j += 1
        if j < len(self.toks) and self.toks[j].text == "(" and j == self.pos + 1:
            return j + 1 < len(self.toks) and self.toks[j + 1].text == "*"
        return j < len(self.toks) and self.toks[j].kind is TokenKind.IDENTIFIER

    def parse_declarator(self):
        """Consume a declarator; returns (name, is_function, param_names)."""
        name = None
        is_function = False
        params = []
        while self.at("*") or (self.peek() is not None and self.peek().text in
                               ("const", "volatile", "restrict", "__restrict", "__restrict__")):
            self.pos += 1
        tok = self.peek()
        if tok is None:
            raise _Recover()
        if tok.kind is TokenKind.IDENTIFIER:
            name = tok.text
            self.pos += 1
        elif tok.text == "(":
            close = self.matching[self.pos]
            self.pos += 1
            name, _, _ = self.parse_declarator()
            self.pos = close + 1
        else:
            raise _Recover()
        first_suffix = True
        while True:
            if self.at("["):
                self.skip_group()
            elif self.at("("):
                if first_suffix and tok.kind is TokenKind.IDENTIFIER:
                    is_function = True
                    params = self.param_names(self.pos, self.matching[self.pos])
                self.skip_group()
            elif self.peek() is not None and self.peek().text in ("__attribute__", "__asm__", "asm"):
                self.pos += 1
                if self.at("("):
                    self.skip_group()
            else:
                break
            first_suffix = False
        return name, is_function, params

    def param_names(self, open_idx, close_idx):
        names = []
        depth = 0
        last_ident = None
        for i in range(open_idx + 1, close_idx + 1):
            tok = self.toks[i]
            if tok.text in ("(", "["):
                depth += 1
            elif tok.text in (")", "]"):
                if depth == 0:
                    if last_ident:
                        names.append(last_ident)
                    break
                depth -= 1
            elif tok.text == "," and depth == 0:
                if last_ident:
                    names.append(last_ident)
                last_ident = None
            elif tok.kind is TokenKind.IDENTIFIER and depth == 0:
                if tok.text not in self.typedefs:
                    last_ident = tok.text
        return names

    def init_declarators(self, is_typedef):
        children = []
        while True:
            start = self.pos
            name, is_function, _ = self.parse_declarator()
            decl_end = self.pos
            init_children = []
            if self.at("="):
                self.pos += 1
                init_children.append(self.initializer())
            if is_typedef:
                self.typedefs.add(name)
            elif is_function:
                self.functions.add(name)
            else:
                self.variables.add(name)
                children.append(self.node(
                    NodeType.VAR_DECLARATION, start, init_children, name=name,
                    declarator=(start, decl_end),
                    name_index=self._name_index(start, decl_end, name),
                ))
            if self.at(","):
                self.pos += 1
                continue
            return children

    def _name_index(self, start, end, name):
        for i in range(start, end):
            if self.toks[i].text == name and self.toks[i].kind is TokenKind.IDENTIFIER:
                return i
        return start

    def initializer(self):
        if self.at("{"):
            start = self.pos
            close = self.matching[self.pos]
            self.pos += 1
            children = []
            while self.pos < close:
                if self.at(","):
                    self.pos += 1
                    continue
                if self.at(".") or self.at("["):
                    # designators
                    while self.pos < close and not self.at("="):
                        if self.at("["):
                            self.skip_group()
                        else:
                            self.pos += 1
                    self.pos += 1
                    continue
                children.append(self.initializer())
            self.pos = close + 1
            return self.node(NodeType.OTHER, start, children, role="init-list")
        return self.assignment_expression()

    # statements

    def compound(self):
        start = self.pos
        close = self.matching[self.pos]
        self.pos += 1
        children = []
        while self.pos < close:
            children.append(self.statement())
        self.pos = close + 1
        return self.node(NodeType.OTHER, start, children, role="compound")

    def recover_statement(self, start):
        """Skip to the next ';' or past a braced group at depth zero."""
        self.pos = start
        while self.pos < len(self.toks):
            if self.at("{"):
                self.skip_group()
                return self.node(NodeType.OTHER, start, role="unparsed")
            if self.at("(") or self.at("["):
                self.skip_group()
                continue
            if self.at("}"):
                break
            self.pos += 1
            if self.toks[self.pos - 1].text == ";":
                break
        if self.pos == start:
            self.pos += 1
        return self.node(NodeType.OTHER, start, role="unparsed")

    def statement(self):
        start = self.pos
        try:
            return self._statement()
        except (_Recover, KeyError, IndexError):
            return self.recover_statement(start)

    def _statement(self):
        start = self.pos
        tok = self.peek()
        if tok is None:
            raise _Recover()
        if tok.text == "{":
            return self.compound()
        if tok.text == ";":
            self.pos += 1
            return self.node(NodeType.OTHER, start, role="empty")
        if tok.kind is TokenKind.KEYWORD:
            word = tok.text
            if word in ("if", "while", "switch"):
                self.pos += 1
                cond = self.paren_expression()
                body = self.statement()
                children = [cond, body]
                if word == "if" and self.at("else"):
                    self.pos += 1
                    children.append(self.statement())
                return self.node(NodeType.OTHER, start, children, role=word)
            if word == "do":
                self.pos += 1
                body = self.statement()
                self.expect("while")
                cond = self.paren_expression()
                self.expect(";")
                return self.node(NodeType.OTHER, start, [body, cond], role="do")
            if word == "for":
                self.pos += 1
                return self.for_statement(start)
            if word == "return":
                self.pos += 1
                children = [] if self.at(";") else [self.expression()]
                self.expect(";")
                return self.node(NodeType.OTHER, start, children, role="return")
            if word in ("break", "continue"):
                self.pos += 1
                self.expect(";")
                return self.node(NodeType.OTHER, start, role=word)
            if word == "goto":
                self.pos += 2
                self.expect(";")
                return self.node(NodeType.OTHER, start, role="goto")
            if word == "case":
                self.pos += 1
                label = self.conditional_expression()
                self.expect(":")
                return self.node(NodeType.OTHER, start, [label], role="case")
            if word == "default":
                self.pos += 1
                self.expect(":")
                return self.node(NodeType.OTHER, start, role="default")
        if tok.kind is TokenKind.IDENTIFIER and self.at(":", 1):
            self.pos += 2
            return self.node(NodeType.OTHER, start, role="label")
        if self.looks_like_declaration():
            return self.declaration()
        expr = self.expression()
        self.expect(";")
        return self.node(NodeType.OTHER, start, [expr], role="expression-statement")

    def for_statement(self, start):
        close = self.matching[self.pos]
        self.expect("(")
        children = []
        if self.looks_like_declaration():
            children.append(self.declaration())
        else:
            if not self.at(";"):
                children.append(self.expression())
            self.expect(";")
        if not self.at(";"):
            children.append(self.expression())
        self.expect(";")
        if self.pos < close:
            children.append(self.expression())
        if self.pos != close:
            raise _Recover()
        self.pos = close + 1
        children.append(self.statement())
        return self.node(NodeType.OTHER, start, children, role="for")

    def looks_like_declaration(self):
        tok = self.peek()
        if tok is None:
            return False
        if tok.kind is TokenKind.KEYWORD:
            return tok.text in TYPE_KEYWORDS
        if tok.kind is not TokenKind.IDENTIFIER:
            return False
        if self.is_type_name(tok):
            nxt = self.peek(1)
            return nxt is not None and nxt.text not in ASSIGN_OPS and nxt.text not in ("(", "[", ".", "->", "++", "--")
        # "T x;" / "T *x = ..." with an unknown typedef T
        j = self.pos + 1
        stars = 0
        while j < len(self.toks) and self.toks[j].text == "*":
            j += 1
            stars += 1
        if j + 1 < len(self.toks) and self.toks[j].kind is TokenKind.IDENTIFIER:
            follow = self.toks[j + 1].text
            if stars == 0:
                return follow in (";", "=", ",", "[")
            return follow in (";", "=", ",", "[")
        return False

    def declaration(self):
        start = self.pos
        is_typedef = self.parse_specifiers()
        children = [] if self.at(";") else self.init_declarators(is_typedef)
        self.expect(";")
        return self.node(NodeType.OTHER, start, children, role="declaration")

    # expressions

    def paren_expression(self):
        self.expect("(")
        expr = self.expression()
        self.expect(")")
        return expr

    def expression(self):
        start = self.pos
        first = self.assignment_expression()
        if not self.at(","):
            return first
        items = [first]
        while self.at(","):
            self.pos += 1
            items.append(self.assignment_expression())
        return self.node(NodeType.OTHER, start, items, role="comma")

    def assignment_expression(self):
        start = self.pos
        lhs = self.conditional_expression()
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in ASSIGN_OPS:
            op_index = self.pos
            self.pos += 1
            rhs = self.assignment_expression()
            return self.node(NodeType.ASSIGNMENT_EXPR, start, [lhs, rhs], op=tok.text, op_index=op_index)
        return lhs

    def conditional_expression(self):
        start = self.pos
        cond = self.binary_expression(4)
        if not self.at("?"):
            return cond
        self.pos += 1
        then = self.expression()
        self.expect(":")
        other = self.conditional_expression()
        return self.node(NodeType.OTHER, start, [cond, then, other], role="conditional")

    def binary_expression(self, min_prec):
        start = self.pos
        lhs = self.unary_expression()
        while True:
            tok = self.peek()
            if tok is None or tok.kind is not TokenKind.OPERATOR:
                return lhs
            prec = BINARY_PRECEDENCE.get(tok.text)
            if prec is None or prec < min_prec:
                return lhs
            self.pos += 1
            rhs = self.binary_expression(prec + 1)
            lhs = self.node(NodeType.OTHER, start, [lhs, rhs], role="binary", op=tok.text)

    def is_cast_ahead(self):
        if not self.at("("):
            return False
        tok = self.peek(1)
        if tok is None:
            return False
        if tok.kind is TokenKind.KEYWORD and tok.text in TYPE_KEYWORDS:
            return True
        if tok.kind is TokenKind.IDENTIFIER:
            close = self.matching.get(self.pos)
            if close is None:
                return False
            if self.is_type_name(tok):
                return True
            # (T *) or (T **)
            inner = self.toks[self.pos + 2:close]
            return bool(inner) and all(t.text == "*" for t in inner)
        return False

    def unary_expression(self):
        start = self.pos
        tok = self.peek()
        if tok is None:
            raise _Recover()
        if tok.kind is TokenKind.OPERATOR and tok.text in PREFIX_OPS:
            self.pos += 1
            operand = self.unary_expression()
            return self.node(NodeType.OTHER, start, [operand], role="unary", op=tok.text)
        if tok.kind is TokenKind.KEYWORD and tok.text in ("sizeof", "_Alignof", "__alignof__"):
            self.pos += 1
            if self.is_cast_ahead():
                self.skip_group()
                return self.node(NodeType.OTHER, start, role="sizeof-type")
            operand = self.unary_expression()
            return self.node(NodeType.OTHER, start, [operand], role="sizeof")
        if self.is_cast_ahead():
            self.skip_group()
            if self.at("{"):
                init = self.initializer()
                return self.postfix(self.node(NodeType.OTHER, start, [init], role="compound-literal"), start)
            operand = self.unary_expression()
            return self.node(NodeType.OTHER, start, [operand], role="cast")
        return self.postfix(self.primary(), start)

    def primary(self):
        start = self.pos
        tok = self.peek()
        if tok is None:
            raise _Recover()
        if tok.kind is TokenKind.IDENTIFIER:
            self.pos += 1
            if self.at("("):
                return self.call(start, tok.text)
            return self.node(NodeType.DECL_REF_EXPR, start, name=tok.text)
        if tok.kind is TokenKind.CONSTANT:
            self.pos += 1
            return self.node(NodeType.OTHER, start, role="constant")
        if tok.kind is TokenKind.STRING:
            while self.peek() is not None and self.peek().kind is TokenKind.STRING:
                self.pos += 1
            return self.node(NodeType.OTHER, start, role="string")
        if tok.text == "(":
            if self.at("{", 1):
                # statement expression
                self.skip_group()
                return self.node(NodeType.OTHER, start, role="statement-expression")
            self.pos += 1
            inner = self.expression()
            self.expect(")")
            return self.node(NodeType.OTHER, start, [inner], role="paren")
        raise _Recover()

    def call(self, start, name):
        close = self.matching[self.pos]
        self.pos += 1
        args = []
        while self.pos < close:
            args.append(self.assignment_expression())
            if self.at(","):
                self.pos += 1
            elif self.pos != close:
                raise _Recover()
        self.pos = close + 1
        return self.node(NodeType.CALL_EXPR, start, args, name=name, callee_index=start)

    def postfix(self, expr, start):
        while True:
            if self.at("["):
                self.pos += 1
                index = self.expression()
                self.expect("]")
                expr = self.node(NodeType.OTHER, start, [expr, index], role="subscript")
            elif self.at("("):
                close = self.matching[self.pos]
                self.pos += 1
                args = [expr]
                while self.pos < close:
                    args.append(self.assignment_expression())
                    if self.at(","):
                        self.pos += 1
                    elif self.pos != close:
                        raise _Recover()
                self.pos = close + 1
                # call through an expression: no callee name
                expr = self.node(NodeType.CALL_EXPR, start, args, name=None, indirect=True)
            elif self.at(".") or self.at("->"):
                self.pos += 2
                expr = self.node(NodeType.OTHER, start, [expr], role="member")
            elif self.at("++") or self.at("--"):
                self.pos += 1
                expr = self.node(NodeType.OTHER, start, [expr], role="postfix")
            else:
                return expr


def parse_c_unit(tokens) -> AstNode:
    """Build the translation-unit AST; raises ParseError on unbalanced brackets."""
    tokens = list(tokens)
    check_balance(tokens)
    return _Parser(tokens).parse_unit()
