"""Parser for a subset of textual LLVM IR.

Statements keep their original text so that a module can be re-rendered
byte-for-byte (blank lines aside). Only ``!dbg`` locations and the variable
descriptors they lead to are interpreted from metadata.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..errors import IrParseError

logger = logging.getLogger(__name__)

_NAME = r'(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+|"[^"]*")'

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<cstr>c"[^"]*")
  | (?P<str>"[^"]*")
  | (?P<local>%""" + _NAME + r""")
  | (?P<global>@""" + _NAME + r""")
  | (?P<meta>!(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+)?)
  | (?P<attr>\#\d+)
  | (?P<num>-?0x[KLMHR]?[0-9A-Fa-f]+|[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<word>[A-Za-z_$.][A-Za-z0-9_$.]*)
  | (?P<punct>\.\.\.|[()\[\]{}<>,=*:|x])
    """,
    re.VERBOSE,
)

TYPE_WORDS = frozenset(
    "void half bfloat float double x86_fp80 fp128 ppc_fp128 ptr label metadata "
    "token x86_mmx x86_amx opaque".split()
)
CONST_WORDS = frozenset("true false null undef poison zeroinitializer none".split())

BINARY_OPS = frozenset(
    "add fadd sub fsub mul fmul udiv sdiv fdiv urem srem frem shl lshr ashr and or xor".split()
)
CAST_OPS = frozenset(
    "trunc zext sext fptrunc fpext fptoui fptosi uitofp sitofp ptrtoint inttoptr bitcast addrspacecast".split()
)
TERMINATORS = frozenset("ret br switch indirectbr invoke callbr resume unreachable cleanupret catchret catchswitch".split())
SUPPORTED_OPS = (
    frozenset("alloca load store call br icmp fcmp select phi getelementptr ret fneg".split())
    | BINARY_OPS | CAST_OPS
)

_LABEL_RE = re.compile(r'^\s*(' + _NAME + r'):(?:\s*(?:;.*)?)?$')
_OLD_LABEL_RE = re.compile(r"^\s*;\s*<label>:(\d+)")
_DEFINE_RE = re.compile(r"^define\b")
_DECLARE_RE = re.compile(r"^declare\b")
_GLOBAL_RE = re.compile(r"^(@" + _NAME + r")\s*=")
_TYPEDEF_RE = re.compile(r"^(%" + _NAME + r")\s*=\s*type\b")
_META_RE = re.compile(r"^!(\d+)\s*=\s*(?:distinct\s+)?(!\w+|!\{)?(.*)$")


@dataclass(frozen=True)
class Operand:
    kind: str  # keyword | type | const | ref | global | label | metadata
    text: str

    @property
    def name(self):
        """The identifier without its sigil for refs, globals and labels."""
        if self.kind in ("ref", "global", "label"):
            return _strip_sigil(self.text)
        return self.text


def _strip_sigil(text):
    text = text[1:]
    if text.startswith('"') and text.endswith('"'):
        text = text[1:-1]
    return text


@dataclass
class IrStatement:
    opcode: str
    operands: Tuple[Operand, ...]
    raw: str
    result: Optional[str] = None
    debug_line: Optional[Tuple[str, int]] = None
    callee: Optional[str] = None
    dbg_ref: Optional[str] = None
    line_no: int = 0
    block: int = 0
    var_name: Optional[str] = None
    phi_incoming: Tuple[Tuple[Operand, str], ...] = ()
    supported: bool = True

    @property
    def uses(self):
        """Local value ids read by this statement (labels excluded)."""
        out = []
        for op in self.operands:
            if op.kind == "ref" and op.name not in out:
                out.append(op.name)
        return out

    @property
    def global_uses(self):
        out = []
        for op in self.operands:
            if op.kind == "global" and op.name not in out and op.name != self.callee:
                out.append(op.name)
        return out

    @property
    def labels(self):
        return [op.name for op in self.operands if op.kind == "label"]

    @property
    def is_terminator(self):
        return self.opcode in TERMINATORS

    @property
    def is_debug_intrinsic(self):
        return self.opcode == "call" and self.callee is not None and self.callee.startswith("llvm.dbg.")


@dataclass
class IrFunction:
    name: str
    params: List[str]
    statements: List[IrStatement]
    is_definition: bool = True
    is_internal: bool = False
    header: str = ""
    labels: Dict[str, int] = field(default_factory=dict)  # label -> index of first statement
    body: list = field(default_factory=list)  # raw label lines and statements, in order
    debug_line: Optional[Tuple[str, int]] = None
    entry_label: Optional[str] = None

    def local_ids(self):
        """All local ids appearing in the function: params, labels, results, uses."""
        ids = set(self.params)
        ids.update(self.labels)
        if self.entry_label is not None:
            ids.add(self.entry_label)
        for st in self.statements:
            if st.result is not None:
                ids.add(st.result)
            for op in st.operands:
                if op.kind in ("ref", "label"):
                    ids.add(op.name)
            for _, blk in st.phi_incoming:
                ids.add(blk)
        return ids


@dataclass
class IrGlobal:
    name: str
    raw: str
    refs: Tuple[str, ...] = ()
    dbg_ref: Optional[str] = None
    debug_line: Optional[Tuple[str, int]] = None
    var_name: Optional[str] = None
    is_internal: bool = False
    is_function_alias: bool = False


@dataclass
class IrModule:
    file_id: str
    source_file: Optional[str]
    functions: List[IrFunction]
    globals: List[IrGlobal]
    declared_externals: frozenset
    type_names: frozenset
    items: list = field(default_factory=list)
    metadata: Dict[str, Tuple[str, str]] = field(default_factory=dict)

    def function(self, name):
        for fn in self.functions:
            if fn.name == name:
                return fn
        return None

    def global_var(self, name):
        for g in self.globals:
            if g.name == name:
                return g
        return None

    def render(self):
        """Re-emit the module text (blank lines dropped)."""
        out = []
        for item in self.items:
            if isinstance(item, IrFunction):
                out.append(item.header)
                for part in item.body:
                    out.append(part.raw if isinstance(part, IrStatement) else part)
                out.append("}")
            elif isinstance(item, IrGlobal):
                out.append(item.raw)
            else:
                out.append(item)
        return "\n".join(out) + "\n"


def lex_ir(text):
    """Tokenize one IR line; returns (kind, text) pairs and stops at a comment."""
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos] == ";":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            out.append(("punct", text[pos]))
            pos += 1
            continue
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group()))
        pos = m.end()
    return out


def _strip_comment(text):
    in_str = False
    for i, ch in enumerate(text):
        if ch == '"':
            in_str = not in_str
        elif ch == ";" and not in_str:
            return text[:i]
    return text


def _bracket_delta(text):
    text = _strip_comment(text)
    depth = 0
    in_str = False
    for ch in text:
        if ch == '"':
            in_str = not in_str
        elif not in_str:
            if ch in "[{(":
                depth += 1
            elif ch in "]})":
                depth -= 1
    return depth


def _parse_metadata(lines):
    md = {}
    for line in lines:
        m = _META_RE.match(line.strip())
        if m:
            md[m.group(1)] = ((m.group(2) or "").lstrip("!"), m.group(3))
    return md


def _md_field(body, name):
    m = re.search(r"\b" + name + r':\s*("(?:[^"\\]|\\.)*"|[^,)]+)', body)
    if not m:
        return None
    value = m.group(1).strip()
    if value.startswith('"'):
        return value[1:-1]
    return value


class _Debug:
    """Resolves !dbg references to (file, line) using the module metadata."""

    def __init__(self, md, default_file):
        self.md = md
        self.default_file = default_file

    def file_of(self, ref, depth=0):
        if ref is None or depth > 32 or ref not in self.md:
            return self.default_file
        kind, body = self.md[ref]
        if kind == "DIFile":
            return _md_field(body, "filename") or self.default_file
        f = _md_field(body, "file")
        if f and f.startswith("!"):
            return self.file_of(f[1:], depth + 1)
        scope = _md_field(body, "scope")
        if scope and scope.startswith("!"):
            return self.file_of(scope[1:], depth + 1)
        return self.default_file

    def location(self, ref):
        if ref is None or ref not in self.md:
            return None
        kind, body = self.md[ref]
        if kind == "DIGlobalVariableExpression":
            var = _md_field(body, "var")
            if var and var.startswith("!"):
                return self.location(var[1:])
            return None
        line = _md_field(body, "line")
        if line is None or not line.isdigit() or int(line) == 0:
            return None
        if kind == "DILocation":
            scope = _md_field(body, "scope")
            file_id = self.file_of(scope[1:]) if scope and scope.startswith("!") else self.default_file
        else:
            file_id = self.file_of(ref)
        return (file_id, int(line))

    def variable_name(self, ref):
        if ref is None or ref not in self.md:
            return None
        kind, body = self.md[ref]
        if kind == "DIGlobalVariableExpression":
            var = _md_field(body, "var")
            return self.variable_name(var[1:]) if var and var.startswith("!") else None
        return _md_field(body, "name")


def _operands(tokens, type_names):
    ops = []
    prev = None
    i = 0
    while i < len(tokens):
        kind, text = tokens[i]
        if kind == "meta" and i + 1 < len(tokens) and tokens[i + 1][0] == "meta" and text[1:2].isalpha():
            # metadata attachment such as "!dbg !12"; handled separately
            i += 2
            continue
        if kind == "local":
            if text in type_names:
                ops.append(Operand("type", text))
            elif prev == "label":
                ops.append(Operand("label", text))
            else:
                ops.append(Operand("ref", text))
        elif kind == "global":
            ops.append(Operand("global", text))
        elif kind == "num" and i + 1 < len(tokens) and tokens[i + 1] == ("word", "x"):
            ops.append(Operand("type", text))  # array or vector length
        elif kind in ("num", "cstr", "str"):
            ops.append(Operand("const", text))
        elif kind == "meta":
            ops.append(Operand("metadata", text))
        elif kind == "word":
            if text in CONST_WORDS:
                ops.append(Operand("const", text))
            elif text in TYPE_WORDS or text == "x" or re.fullmatch(r"i\d+", text):
                ops.append(Operand("type", text))
            else:
                ops.append(Operand("keyword", text))
        prev = text if kind == "word" else None
        i += 1
    return tuple(ops)


def _phi_incoming(tokens, type_names):
    pairs = []
    i = 0
    while i < len(tokens):
        if tokens[i][1] == "[":
            j = i + 1
            depth = 1
            while j < len(tokens) and depth:
                if tokens[j][1] == "[":
                    depth += 1
                elif tokens[j][1] == "]":
                    depth -= 1
                j += 1
            inner = tokens[i + 1:j - 1]
            # split at the last top-level comma: [ value, %block ]
            if inner and inner[-1][0] == "local":
                value_toks = inner[:-2] if len(inner) >= 2 and inner[-2][1] == "," else inner[:-1]
                vals = _operands(value_toks, type_names)
                value = vals[-1] if vals else Operand("const", "undef")
                pairs.append((value, _strip_sigil(inner[-1][1])))
            i = j
        else:
            i += 1
    return tuple(pairs)


def parse_statement(raw, type_names=frozenset(), line_no=0):
    """Parse a single instruction line into an IrStatement (no debug resolution)."""
    tokens = lex_ir(raw)
    if not tokens:
        raise IrParseError("empty statement", line_no)
    result = None
    if len(tokens) >= 2 and tokens[1] == ("punct", "="):
        kind, text = tokens[0]
        if kind != "local":
            raise IrParseError(f"malformed SSA id {text!r}", line_no)
        name = _strip_sigil(text)
        if not name:
            raise IrParseError(f"malformed SSA id {text!r}", line_no)
        result = name
        tokens = tokens[2:]
    while tokens and tokens[0][1] in ("tail", "musttail", "notail"):
        tokens = tokens[1:]
    if not tokens or tokens[0][0] != "word":
        raise IrParseError(f"cannot find opcode in {raw.strip()!r}", line_no)
    opcode = tokens[0][1]
    body = tokens[1:]

    dbg_ref = None
    for i in range(len(body) - 1):
        if body[i] == ("meta", "!dbg") and body[i + 1][0] == "meta":
            dbg_ref = body[i + 1][1][1:]

    callee = None
    if opcode in ("call", "invoke", "callbr"):
        for i in range(len(body) - 1):
            if body[i][0] in ("global", "local") and body[i + 1][1] == "(":
                callee = _strip_sigil(body[i][1]) if body[i][0] == "global" else None
                break

    ops = _operands(body, type_names)
    phi = _phi_incoming(body, type_names) if opcode == "phi" else ()
    if opcode == "phi":
        # incoming block names are labels, not values
        blocks = {b for _, b in phi}
        ops = tuple(Operand("label", o.text) if o.kind == "ref" and o.name in blocks and
                    all(o != v for v, _ in phi) else o for o in ops)
    supported = opcode in SUPPORTED_OPS
    return IrStatement(
        opcode=opcode, operands=ops, raw=raw, result=result, callee=callee,
        dbg_ref=dbg_ref, line_no=line_no, phi_incoming=phi, supported=supported,
    )


def _split_params(param_text):
    parts, depth, cur = [], 0, []
    for ch in param_text:
        if ch in "([{<":
            depth += 1
        elif ch in ")]}>":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _parse_header(header, type_names):
    toks = lex_ir(header)
    name = None
    for i, (kind, text) in enumerate(toks):
        if kind == "global" and i + 1 < len(toks) and toks[i + 1][1] == "(":
            name = _strip_sigil(text)
            break
    if name is None:
        raise IrParseError(f"cannot find function name in {header!r}")
    # parameter text between the matching parentheses
    start = header.index("(", header.index("@"))
    depth = 0
    end = start
    for j in range(start, len(header)):
        if header[j] == "(":
            depth += 1
        elif header[j] == ")":
            depth -= 1
            if depth == 0:
                end = j
                break
    params = []
    implicit = 0
    for p in _split_params(header[start + 1:end]):
        if p == "...":
            continue
        ptoks = [t for t in lex_ir(p) if t[0] == "local" and t[1] not in type_names]
        if ptoks:
            params.append(_strip_sigil(ptoks[-1][1]))
        else:
            params.append(str(implicit))
        implicit += 1
    linkage = header.split("@", 1)[0]
    is_internal = bool(re.search(r"\b(internal|private)\b", linkage))
    dbg = None
    tail = header[end + 1:]
    m = re.search(r"!dbg\s+!(\d+)", tail)
    if m:
        dbg = m.group(1)
    return name, params, is_internal, dbg


def parse_ll(text: str, file_id: str) -> IrModule:
    """Parse textual LLVM IR into an IrModule."""
    raw_lines = text.split("\n")
    if raw_lines and raw_lines[-1] == "":
        raw_lines.pop()

    type_names = set()
    meta_lines = []
    for line in raw_lines:
        s = line.strip()
        m = _TYPEDEF_RE.match(s)
        if m:
            type_names.add(m.group(1))
        elif s.startswith("!") and "=" in s:
            meta_lines.append(s)
    type_names = frozenset(type_names)
    md = _parse_metadata(meta_lines)

    source_file = None
    for line in raw_lines:
        m = re.match(r'^source_filename\s*=\s*"([^"]*)"', line)
        if m:
            source_file = m.group(1)
            break
    debug = _Debug(md, source_file or file_id)

    items = []
    functions = []
    globals_ = []
    declared = set()
    i = 0
    n = len(raw_lines)
    while i < n:
        line = raw_lines[i]
        s = line.strip()
        lineno = i + 1
        if not s:
            i += 1
            continue
        if _DEFINE_RE.match(s):
            header = line
            while "{" not in _strip_comment(header) and i + 1 < n:
                i += 1
                header += "\n" + raw_lines[i]
            fn, i = _parse_function(raw_lines, i + 1, header, type_names, debug, lineno)
            functions.append(fn)
            items.append(fn)
            continue
        if _DECLARE_RE.match(s):
            name = _parse_header(line, type_names)[0]
            declared.add(name)
            items.append(line)
            i += 1
            continue
        m = _GLOBAL_RE.match(s)
        if m:
            raw = line
            while _bracket_delta(raw) > 0 and i + 1 < n:
                i += 1
                raw += "\n" + raw_lines[i]
            g = _parse_global(raw, m.group(1), type_names, debug)
            globals_.append(g)
            items.append(g)
            i += 1
            continue
        items.append(line)
        i += 1

    names = [f.name for f in functions]
    dup = {x for x in names if names.count(x) > 1}
    if dup:
        raise IrParseError(f"function defined twice: {sorted(dup)[0]}")
    defined = set(names)
    module = IrModule(
        file_id=file_id,
        source_file=source_file,
        functions=functions,
        globals=globals_,
        declared_externals=frozenset(declared - defined),
        type_names=type_names,
        items=items,
        metadata=md,
    )
    return module


def _parse_global(raw, name_text, type_names, debug):
    toks = lex_ir(raw)
    dbg = None
    for i in range(len(toks) - 1):
        if toks[i] == ("meta", "!dbg") and toks[i + 1][0] == "meta":
            dbg = toks[i + 1][1][1:]
    refs = []
    for kind, text in toks[1:]:
        if kind == "global":
            nm = _strip_sigil(text)
            if nm not in refs:
                refs.append(nm)
    head = raw.split("=", 1)[1]
    return IrGlobal(
        name=_strip_sigil(name_text),
        raw=raw,
        refs=tuple(refs),
        dbg_ref=dbg,
        debug_line=debug.location(dbg),
        var_name=debug.variable_name(dbg),
        is_internal=bool(re.search(r"\b(internal|private)\b", head.split("global")[0].split("constant")[0])),
        is_function_alias=bool(re.search(r"\balias\b", head)),
    )


def _parse_function(lines, i, header, type_names, debug, header_lineno):
    name, params, is_internal, dbg = _parse_header(header, type_names)
    statements: List[IrStatement] = []
    body = []
    labels: Dict[str, int] = {}
    seen_defs = {}
    block = 0
    first_block_labeled = False
    n = len(lines)
    while i < n:
        line = lines[i]
        s = line.strip()
        lineno = i + 1
        if s == "}":
            i += 1
            break
        if not s:
            i += 1
            continue
        m = _LABEL_RE.match(line) or _OLD_LABEL_RE.match(line)
        if m:
            label = m.group(1)
            if label.startswith('"'):
                label = label[1:-1]
            if statements:
                block += 1
            else:
                first_block_labeled = True
            if label in labels or label in seen_defs or label in params:
                raise IrParseError(f"duplicate definition of %{label}", lineno)
            labels[label] = len(statements)
            body.append(line)
            i += 1
            continue
        if s.startswith(";"):
            body.append(line)
            i += 1
            continue
        raw = line
        while _bracket_delta(raw) > 0 and i + 1 < n:
            i += 1
            raw += "\n" + lines[i]
        st = parse_statement(raw, type_names, lineno)
        if st.result is not None:
            if st.result in seen_defs or st.result in params or st.result in labels:
                raise IrParseError(f"duplicate definition of %{st.result}", lineno)
            seen_defs[st.result] = len(statements)
        if not st.supported:
            logger.debug("opaque statement %r at line %d", st.opcode, lineno)
        st.debug_line = debug.location(st.dbg_ref)
        st.block = block
        statements.append(st)
        body.append(st)
        if st.is_terminator:
            # a following unlabeled instruction starts an implicitly numbered block
            pass
        i += 1
    else:
        raise IrParseError(f"unterminated function @{name}", header_lineno)

    entry_label = None
    if not first_block_labeled:
        numeric = [int(p) for p in params if p.isdigit()]
        entry_label = str(max(numeric) + 1 if numeric else 0)

    # declared variables: attach the source line and name to their allocas
    by_result = {st.result: st for st in statements if st.result is not None}
    for st in statements:
        if st.result is not None and st.opcode == "alloca" and not st.result.isdigit() and st.var_name is None:
            st.var_name = st.result
        if st.callee in ("llvm.dbg.declare", "llvm.dbg.addr") and st.operands:
            target = next((op for op in st.operands if op.kind == "ref"), None)
            var_ref = next((op for op in st.operands if op.kind == "metadata" and op.text[1:].isdigit()), None)
            if target is None or var_ref is None:
                continue
            alloca = by_result.get(target.name)
            if alloca is None:
                continue
            var_name = debug.variable_name(var_ref.text[1:])
            if var_name:
                alloca.var_name = var_name
            if alloca.debug_line is None:
                alloca.debug_line = debug.location(var_ref.text[1:]) or st.debug_line

    fn = IrFunction(
        name=name,
        params=params,
        statements=statements,
        is_definition=True,
        is_internal=is_internal,
        header=header,
        labels=labels,
        body=body,
        debug_line=debug.location(dbg),
        entry_label=entry_label,
    )
    return fn, i
